//! Pinned build inputs and the canonical leaf enumeration that feeds the
//! input Merkle tree.
//!
//! Leaf order is fixed: source commit, source tree, lockfile, dependencies
//! sorted byte-wise by name, then toolchain entries in declared order. Each
//! leaf is `label || 0x00 || digest`, so leaves of different kinds can never
//! collide even when their digests coincide.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::digest::{is_lower_hex, sha256, Digest32};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("malformed lock manifest: {0}")]
    MalformedManifest(String),
    #[error("duplicate dependency {0:?}")]
    DuplicateDependency(String),
    #[error("bad digest in {field}: {reason}")]
    BadDigest { field: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InputError {
    #[error("input mismatch for {name}: expected {expected}, got {actual}")]
    InputMismatch {
        name: String,
        expected: Digest32,
        actual: Digest32,
    },
    #[error("no bytes available for dependency {name}")]
    MissingBlob { name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceIdentity {
    pub repository: String,
    #[serde(rename = "ref")]
    pub git_ref: String,
    /// Git object id, 40 (SHA-1) or 64 (SHA-256) lowercase hex characters.
    pub commit_id: String,
    pub tree_digest: Digest32,
    pub signed: bool,
}

impl SourceIdentity {
    /// Raw bytes of the commit id.
    pub fn commit_bytes(&self) -> Vec<u8> {
        hex::decode(&self.commit_id).expect("commit id validated at parse time")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyEntry {
    pub name: String,
    pub version: String,
    pub purl: String,
    pub digest: Digest32,
    pub local_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolchainEntry {
    pub tool_name: String,
    pub digest: Digest32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockManifest {
    pub source: SourceIdentity,
    pub lockfile_digest: Digest32,
    /// Sorted by name, byte-wise.
    pub dependencies: Vec<DependencyEntry>,
    pub toolchain: Vec<ToolchainEntry>,
}

// On-disk shape of kettle.lock.json. Digests stay strings here so that a bad
// digest is reported as such rather than as a generic syntax error.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    repository: String,
    #[serde(rename = "ref")]
    git_ref: String,
    commit_id: String,
    tree_digest: String,
    signed: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDependency {
    name: String,
    version: String,
    purl: String,
    sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTool {
    tool: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLock {
    source: RawSource,
    lockfile_sha256: String,
    dependencies: Vec<RawDependency>,
    toolchain: Vec<RawTool>,
}

fn parse_digest(field: &str, value: &str) -> Result<Digest32, ManifestError> {
    Digest32::from_hex(value).map_err(|e| ManifestError::BadDigest {
        field: field.to_owned(),
        reason: e.to_string(),
    })
}

/// Parse a `kettle.lock.json` document.
pub fn parse_lock_manifest(raw: &[u8]) -> Result<LockManifest, ManifestError> {
    let raw: RawLock = serde_json::from_slice(raw).map_err(|e| ManifestError::MalformedManifest(e.to_string()))?;

    let src = raw.source;
    if src.repository.is_empty() {
        return Err(ManifestError::MalformedManifest("source.repository is empty".into()));
    }
    if !(is_lower_hex(&src.commit_id, 40) || is_lower_hex(&src.commit_id, 64)) {
        return Err(ManifestError::BadDigest {
            field: "source.commit_id".into(),
            reason: format!("expected 40 or 64 lowercase hex characters, got {:?}", src.commit_id),
        });
    }
    let source = SourceIdentity {
        tree_digest: parse_digest("source.tree_digest", &src.tree_digest)?,
        repository: src.repository,
        git_ref: src.git_ref,
        commit_id: src.commit_id,
        signed: src.signed,
    };
    let lockfile_digest = parse_digest("lockfile_sha256", &raw.lockfile_sha256)?;

    let mut names = HashSet::new();
    let mut dependencies = Vec::with_capacity(raw.dependencies.len());
    for dep in raw.dependencies {
        if dep.name.is_empty() {
            return Err(ManifestError::MalformedManifest("dependency with empty name".into()));
        }
        if !dep.purl.starts_with("pkg:") {
            return Err(ManifestError::MalformedManifest(format!(
                "dependency {:?}: purl must start with \"pkg:\"",
                dep.name
            )));
        }
        let digest = parse_digest(&format!("dependencies[{}].sha256", dep.name), &dep.sha256)?;
        if !names.insert(dep.name.clone()) {
            return Err(ManifestError::DuplicateDependency(dep.name));
        }
        dependencies.push(DependencyEntry {
            name: dep.name,
            version: dep.version,
            purl: dep.purl,
            digest,
            local_path: dep.path.map(PathBuf::from),
        });
    }
    dependencies.sort_by(|a, b| a.name.as_bytes().cmp(b.name.as_bytes()));

    let mut tools = HashSet::new();
    let mut toolchain = Vec::with_capacity(raw.toolchain.len());
    for tool in raw.toolchain {
        let digest = parse_digest(&format!("toolchain[{}].sha256", tool.tool), &tool.sha256)?;
        if !tools.insert(tool.tool.clone()) {
            return Err(ManifestError::MalformedManifest(format!(
                "duplicate tool {:?}",
                tool.tool
            )));
        }
        toolchain.push(ToolchainEntry {
            tool_name: tool.tool,
            digest,
        });
    }

    Ok(LockManifest {
        source,
        lockfile_digest,
        dependencies,
        toolchain,
    })
}

impl LockManifest {
    /// Serialize back into the `kettle.lock.json` format.
    pub fn to_json(&self) -> Vec<u8> {
        let raw = RawLock {
            source: RawSource {
                repository: self.source.repository.clone(),
                git_ref: self.source.git_ref.clone(),
                commit_id: self.source.commit_id.clone(),
                tree_digest: self.source.tree_digest.to_hex(),
                signed: self.source.signed,
            },
            lockfile_sha256: self.lockfile_digest.to_hex(),
            dependencies: self
                .dependencies
                .iter()
                .map(|d| RawDependency {
                    name: d.name.clone(),
                    version: d.version.clone(),
                    purl: d.purl.clone(),
                    sha256: d.digest.to_hex(),
                    path: d.local_path.as_ref().map(|p| p.to_string_lossy().into_owned()),
                })
                .collect(),
            toolchain: self
                .toolchain
                .iter()
                .map(|t| RawTool {
                    tool: t.tool_name.clone(),
                    sha256: t.digest.to_hex(),
                })
                .collect(),
        };
        serde_json::to_vec_pretty(&raw).expect("lock manifest serializes")
    }

    pub fn dependency(&self, name: &str) -> Option<&DependencyEntry> {
        self.dependencies.iter().find(|d| d.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputCheck {
    pub name: String,
    pub digest: Digest32,
}

/// Every dependency matched its pinned digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PinnedInputsVerified {
    pub checks: Vec<InputCheck>,
}

/// Check every dependency's bytes against its pinned digest. Stops at the
/// first mismatch, which indicates a substituted dependency.
pub fn verify_pinned_inputs<F>(manifest: &LockManifest, mut resolve: F) -> Result<PinnedInputsVerified, InputError>
where
    F: FnMut(&DependencyEntry) -> Option<Vec<u8>>,
{
    let mut checks = Vec::with_capacity(manifest.dependencies.len());
    for dep in &manifest.dependencies {
        let bytes = resolve(dep).ok_or_else(|| InputError::MissingBlob { name: dep.name.clone() })?;
        let actual = sha256(&bytes);
        if actual != dep.digest {
            return Err(InputError::InputMismatch {
                name: dep.name.clone(),
                expected: dep.digest,
                actual,
            });
        }
        checks.push(InputCheck {
            name: dep.name.clone(),
            digest: actual,
        });
    }
    Ok(PinnedInputsVerified { checks })
}

/// Resolver reading each dependency's `path` relative to `root`.
pub fn dir_resolver(root: &Path) -> impl FnMut(&DependencyEntry) -> Option<Vec<u8>> + '_ {
    move |dep| dep.local_path.as_ref().and_then(|p| fs::read(root.join(p)).ok())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leaf {
    pub label: String,
    pub bytes: Vec<u8>,
}

impl Leaf {
    fn new(label: String, digest: &[u8; 32]) -> Self {
        let mut bytes = Vec::with_capacity(label.len() + 33);
        bytes.extend_from_slice(label.as_bytes());
        bytes.push(0x00);
        bytes.extend_from_slice(digest);
        Leaf { label, bytes }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputManifest {
    pub ordered_leaves: Vec<Leaf>,
    /// Set by [`crate::merkle::build_tree`].
    pub merkle_root: Option<Digest32>,
}

impl InputManifest {
    pub fn leaf_index(&self, label: &str) -> Option<usize> {
        self.ordered_leaves.iter().position(|l| l.label == label)
    }
}

pub fn dependency_label(dep: &DependencyEntry) -> String {
    format!("dep.{}@{}", dep.name, dep.version)
}

/// Lay out all inputs as Merkle leaves in canonical order.
pub fn enumerate_inputs(manifest: &LockManifest) -> InputManifest {
    let mut leaves = Vec::with_capacity(3 + manifest.dependencies.len() + manifest.toolchain.len());
    leaves.push(Leaf::new(
        "src.commit".into(),
        &sha256(&manifest.source.commit_bytes()).0,
    ));
    leaves.push(Leaf::new("src.tree".into(), &manifest.source.tree_digest.0));
    leaves.push(Leaf::new("lockfile".into(), &manifest.lockfile_digest.0));

    let mut deps: Vec<&DependencyEntry> = manifest.dependencies.iter().collect();
    deps.sort_by(|a, b| a.name.as_bytes().cmp(b.name.as_bytes()));
    for dep in deps {
        leaves.push(Leaf::new(dependency_label(dep), &dep.digest.0));
    }
    for tool in &manifest.toolchain {
        leaves.push(Leaf::new(format!("tool.{}", tool.tool_name), &tool.digest.0));
    }
    InputManifest {
        ordered_leaves: leaves,
        merkle_root: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EMPTY_SHA256: &str = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";

    fn lock_json(deps: &str, tools: &str) -> String {
        format!(
            r#"{{
              "source": {{
                "repository": "https://github.com/org/repo",
                "ref": "refs/heads/main",
                "commit_id": "{commit}",
                "tree_digest": "{tree}",
                "signed": false
              }},
              "lockfile_sha256": "{lock}",
              "dependencies": [{deps}],
              "toolchain": [{tools}]
            }}"#,
            commit = "ab".repeat(20),
            tree = "cd".repeat(32),
            lock = "ef".repeat(32),
        )
    }

    fn dep(name: &str, digest: &str) -> String {
        format!(r#"{{"name":"{name}","version":"1.0.0","purl":"pkg:cargo/{name}@1.0.0","sha256":"{digest}"}}"#)
    }

    #[test]
    fn minimal_manifest_parses() {
        let m = parse_lock_manifest(lock_json("", "").as_bytes()).unwrap();
        assert!(m.dependencies.is_empty());
        assert_eq!(m.source.git_ref, "refs/heads/main");
    }

    #[test]
    fn dependencies_are_reordered() {
        let deps = format!("{},{}", dep("serde", &"11".repeat(32)), dep("anyhow", &"22".repeat(32)));
        let m = parse_lock_manifest(lock_json(&deps, "").as_bytes()).unwrap();
        let names: Vec<_> = m.dependencies.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, ["anyhow", "serde"]);
    }

    #[test]
    fn short_digest_is_bad_digest() {
        let deps = dep("serde", &"1".repeat(63));
        let err = parse_lock_manifest(lock_json(&deps, "").as_bytes()).unwrap_err();
        assert!(matches!(err, ManifestError::BadDigest { .. }), "{err}");
    }

    #[test]
    fn duplicate_dependency_rejected() {
        let deps = format!("{},{}", dep("serde", &"11".repeat(32)), dep("serde", &"22".repeat(32)));
        let err = parse_lock_manifest(lock_json(&deps, "").as_bytes()).unwrap_err();
        assert!(matches!(err, ManifestError::DuplicateDependency(ref n) if n == "serde"));
    }

    #[test]
    fn unknown_field_and_bad_purl_rejected() {
        let with_extra = lock_json("", "").replacen("\"source\"", "\"extra\": 1, \"source\"", 1);
        assert!(matches!(
            parse_lock_manifest(with_extra.as_bytes()),
            Err(ManifestError::MalformedManifest(_))
        ));
        let bad_purl = format!(
            r#"{{"name":"x","version":"1","purl":"cargo/x@1","sha256":"{}"}}"#,
            "00".repeat(32)
        );
        assert!(matches!(
            parse_lock_manifest(lock_json(&bad_purl, "").as_bytes()),
            Err(ManifestError::MalformedManifest(_))
        ));
        assert!(matches!(
            parse_lock_manifest(b"{not json"),
            Err(ManifestError::MalformedManifest(_))
        ));
    }

    #[test]
    fn commit_id_length_checked() {
        let bad = lock_json("", "").replace(&"ab".repeat(20), &"ab".repeat(21));
        assert!(matches!(
            parse_lock_manifest(bad.as_bytes()),
            Err(ManifestError::BadDigest { .. })
        ));
        let sha256_commit = lock_json("", "").replace(&"ab".repeat(20), &"ab".repeat(32));
        assert!(parse_lock_manifest(sha256_commit.as_bytes()).is_ok());
    }

    #[test]
    fn pinned_inputs_pass_and_fail() {
        let deps = dep("empty", EMPTY_SHA256);
        let m = parse_lock_manifest(lock_json(&deps, "").as_bytes()).unwrap();
        let ok = verify_pinned_inputs(&m, |_| Some(Vec::new())).unwrap();
        assert_eq!(ok.checks.len(), 1);

        let err = verify_pinned_inputs(&m, |_| Some(vec![0u8])).unwrap_err();
        assert!(matches!(err, InputError::InputMismatch { ref name, .. } if name == "empty"));

        let err = verify_pinned_inputs(&m, |_| None).unwrap_err();
        assert_eq!(err, InputError::MissingBlob { name: "empty".into() });
    }

    #[test]
    fn single_byte_flip_detected() {
        let payload = b"serde crate bytes".to_vec();
        let deps = dep("serde", &sha256(&payload).to_hex());
        let m = parse_lock_manifest(lock_json(&deps, "").as_bytes()).unwrap();
        assert!(verify_pinned_inputs(&m, |_| Some(payload.clone())).is_ok());
        let mut flipped = payload.clone();
        flipped[3] ^= 0x01;
        assert!(verify_pinned_inputs(&m, |_| Some(flipped.clone())).is_err());
    }

    #[test]
    fn leaf_count_and_order() {
        let deps = dep("serde", &"11".repeat(32));
        let tools = format!(r#"{{"tool":"rustc","sha256":"{}"}}"#, "99".repeat(32));
        let m = parse_lock_manifest(lock_json(&deps, &tools).as_bytes()).unwrap();
        let im = enumerate_inputs(&m);
        let labels: Vec<_> = im.ordered_leaves.iter().map(|l| l.label.as_str()).collect();
        assert_eq!(
            labels,
            ["src.commit", "src.tree", "lockfile", "dep.serde@1.0.0", "tool.rustc"]
        );
        let tool_leaf = &im.ordered_leaves[4].bytes;
        assert_eq!(&tool_leaf[..10], b"tool.rustc");
        assert_eq!(tool_leaf[10], 0);
        assert_eq!(&tool_leaf[11..], &[0x99u8; 32]);
    }

    #[test]
    fn byte_wise_name_order() {
        let deps = ["b", "a", "B"].map(|n| dep(n, &"11".repeat(32))).join(",");
        let m = parse_lock_manifest(lock_json(&deps, "").as_bytes()).unwrap();
        let im = enumerate_inputs(&m);
        let labels: Vec<_> = im.ordered_leaves[3..].iter().map(|l| l.label.as_str()).collect();
        assert_eq!(labels, ["dep.B@1.0.0", "dep.a@1.0.0", "dep.b@1.0.0"]);
    }

    #[test]
    fn toolchain_keeps_declared_order() {
        let tools = ["zig", "cc", "ld"]
            .map(|t| format!(r#"{{"tool":"{t}","sha256":"{}"}}"#, "01".repeat(32)))
            .join(",");
        let m = parse_lock_manifest(lock_json("", &tools).as_bytes()).unwrap();
        let im = enumerate_inputs(&m);
        let labels: Vec<_> = im.ordered_leaves[3..].iter().map(|l| l.label.as_str()).collect();
        assert_eq!(labels, ["tool.zig", "tool.cc", "tool.ld"]);
    }

    #[test]
    fn to_json_round_trips() {
        let deps = format!("{},{}", dep("serde", &"11".repeat(32)), dep("anyhow", &"22".repeat(32)));
        let m = parse_lock_manifest(lock_json(&deps, "").as_bytes()).unwrap();
        assert_eq!(parse_lock_manifest(&m.to_json()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn leaf_order_ignores_declaration_order(
            names in prop::collection::btree_set("[a-z][a-z0-9_-]{0,11}", 1..12).prop_map(Vec::from_iter).prop_shuffle()
        ) {
            let body = |ns: &[String]| ns.iter().map(|n| dep(n, &"11".repeat(32))).collect::<Vec<_>>().join(",");
            let shuffled = parse_lock_manifest(lock_json(&body(&names), "").as_bytes()).unwrap();
            let mut sorted = names.clone();
            sorted.sort();
            let ordered = parse_lock_manifest(lock_json(&body(&sorted), "").as_bytes()).unwrap();
            prop_assert_eq!(enumerate_inputs(&shuffled), enumerate_inputs(&ordered));
            prop_assert_eq!(parse_lock_manifest(&shuffled.to_json()).unwrap(), shuffled);
        }
    }
}
