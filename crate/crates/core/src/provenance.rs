//! in-toto Statement carrying a SLSA Provenance v1 predicate.
//!
//! The canonical encoding of the statement is the exact byte string whose
//! SHA-256 the attestation report commits to, so parsing is strict: unknown
//! fields anywhere are rejected.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::canonical::{self, CanonicalError};
use crate::digest::{is_lower_hex, sha256, Digest32, Nonce};
use crate::manifest::{InputManifest, LockManifest};

pub const STATEMENT_TYPE: &str = "https://in-toto.io/Statement/v1";
pub const PREDICATE_TYPE: &str = "https://slsa.dev/provenance/v1";
pub const BUILDER_ID: &str = "https://kettle.confidential.ai/tee-builder/v1";

#[derive(Debug, thiserror::Error)]
pub enum ProvenanceError {
    #[error("a statement needs at least one output subject")]
    NoOutputs,
    #[error("input manifest has no Merkle root; build the tree first")]
    MissingMerkleRoot,
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error("malformed statement: {0}")]
    MalformedStatement(String),
    #[error("unknown field: {0}")]
    UnknownField(String),
    #[error("wrong statement type: {0}")]
    WrongStatementType(String),
}

/// UTC timestamp with second precision, rendered as `YYYY-MM-DDTHH:MM:SSZ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

impl Timestamp {
    pub fn from_unix(secs: i64) -> Self {
        Timestamp(secs)
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Timestamp(dt.timestamp())
    }

    pub fn unix(&self) -> i64 {
        self.0
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        let naive =
            NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT).map_err(|e| format!("bad timestamp {s:?}: {e}"))?;
        let ts = Timestamp(naive.and_utc().timestamp());
        // Reject anything that would not re-render identically.
        if ts.to_string() != s {
            return Err(format!("non-canonical timestamp {s:?}"));
        }
        Ok(ts)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dt = DateTime::<Utc>::from_timestamp(self.0, 0).ok_or(fmt::Error)?;
        write!(f, "{}", dt.format(TIMESTAMP_FORMAT))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Timestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectDigest {
    pub sha256: Digest32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subject {
    pub name: String,
    pub digest: SubjectDigest,
}

impl Subject {
    pub fn new(name: impl Into<String>, sha256: Digest32) -> Self {
        Subject {
            name: name.into(),
            digest: SubjectDigest { sha256 },
        }
    }
}

/// Digest algorithms a [`ResourceDescriptor`] may carry.
pub const DIGEST_SHA256: &str = "sha256";
pub const DIGEST_GIT_COMMIT: &str = "gitCommit";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceDescriptor {
    pub uri: String,
    pub digest: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl ResourceDescriptor {
    fn validate(&self) -> Result<(), String> {
        if self.digest.is_empty() {
            return Err(format!("descriptor {:?} has no digest", self.uri));
        }
        for (alg, value) in &self.digest {
            let ok = match alg.as_str() {
                DIGEST_SHA256 => is_lower_hex(value, 64),
                DIGEST_GIT_COMMIT => is_lower_hex(value, 40) || is_lower_hex(value, 64),
                other => return Err(format!("unknown digest algorithm {other:?}")),
            };
            if !ok {
                return Err(format!("descriptor {:?}: bad {alg} digest {value:?}", self.uri));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalParameters {
    pub repository: String,
    #[serde(rename = "ref")]
    pub git_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolDigest {
    pub name: String,
    pub sha256: Digest32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InternalParameters {
    pub tee_platform: String,
    pub kettle_version: String,
    pub input_merkle_root: Digest32,
    pub build_nonce: Nonce,
    pub source_tree_digest: Digest32,
    pub lockfile_sha256: Digest32,
    pub toolchain: Vec<ToolDigest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct BuildDefinition {
    pub build_type: String,
    pub external_parameters: ExternalParameters,
    pub internal_parameters: InternalParameters,
    pub resolved_dependencies: Vec<ResourceDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Builder {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct BuildMetadataFields {
    pub invocation_id: String,
    pub started_on: Timestamp,
    pub finished_on: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDetails {
    pub builder: Builder,
    pub metadata: BuildMetadataFields,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct SlsaPredicate {
    pub build_definition: BuildDefinition,
    pub run_details: RunDetails,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvenanceStatement {
    #[serde(rename = "_type")]
    pub statement_type: String,
    pub subject: Vec<Subject>,
    #[serde(rename = "predicateType")]
    pub predicate_type: String,
    pub predicate: SlsaPredicate,
}

impl ProvenanceStatement {
    pub fn input_merkle_root(&self) -> Digest32 {
        self.predicate.build_definition.internal_parameters.input_merkle_root
    }

    pub fn build_nonce(&self) -> Nonce {
        self.predicate.build_definition.internal_parameters.build_nonce
    }

    pub fn external_parameters(&self) -> &ExternalParameters {
        &self.predicate.build_definition.external_parameters
    }

    pub fn subject_digest(&self, name: &str) -> Option<Digest32> {
        self.subject.iter().find(|s| s.name == name).map(|s| s.digest.sha256)
    }

    /// Structural invariants beyond what the type system enforces.
    pub fn validate(&self) -> Result<(), ProvenanceError> {
        if self.statement_type != STATEMENT_TYPE {
            return Err(ProvenanceError::WrongStatementType(self.statement_type.clone()));
        }
        if self.predicate_type != PREDICATE_TYPE {
            return Err(ProvenanceError::WrongStatementType(self.predicate_type.clone()));
        }
        let malformed = |m: String| Err(ProvenanceError::MalformedStatement(m));
        if self.subject.is_empty() {
            return malformed("statement has no subjects".into());
        }
        if let Some(s) = self.subject.iter().find(|s| s.name.is_empty()) {
            return malformed(format!("subject with digest {} has an empty name", s.digest.sha256));
        }
        let def = &self.predicate.build_definition;
        if def.build_type.is_empty() || self.predicate.run_details.builder.id.is_empty() {
            return malformed("buildType and builder.id must be non-empty".into());
        }
        for d in &def.resolved_dependencies {
            d.validate().map_err(ProvenanceError::MalformedStatement)?;
        }
        let meta = &self.predicate.run_details.metadata;
        if meta.started_on > meta.finished_on {
            return malformed(format!(
                "startedOn {} is after finishedOn {}",
                meta.started_on, meta.finished_on
            ));
        }
        Ok(())
    }
}

/// Build metadata that is not derived from the inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildMetadata {
    pub build_type: String,
    pub tee_platform: String,
    pub kettle_version: String,
    pub invocation_id: String,
    pub started_on: Timestamp,
    pub finished_on: Timestamp,
}

pub fn assemble_statement(
    manifest: &InputManifest,
    lock: &LockManifest,
    outputs: &[(String, Digest32)],
    meta: &BuildMetadata,
    nonce: Nonce,
) -> Result<ProvenanceStatement, ProvenanceError> {
    if outputs.is_empty() {
        return Err(ProvenanceError::NoOutputs);
    }
    let merkle_root = manifest.merkle_root.ok_or(ProvenanceError::MissingMerkleRoot)?;
    let src = &lock.source;

    let mut resolved = Vec::with_capacity(1 + lock.dependencies.len());
    resolved.push(ResourceDescriptor {
        uri: format!("git+{}@{}", src.repository, src.git_ref),
        digest: BTreeMap::from([(DIGEST_GIT_COMMIT.to_owned(), src.commit_id.clone())]),
        name: None,
    });
    resolved.extend(lock.dependencies.iter().map(|d| ResourceDescriptor {
        uri: d.purl.clone(),
        digest: BTreeMap::from([(DIGEST_SHA256.to_owned(), d.digest.to_hex())]),
        name: None,
    }));

    let statement = ProvenanceStatement {
        statement_type: STATEMENT_TYPE.to_owned(),
        subject: outputs.iter().map(|(n, d)| Subject::new(n.clone(), *d)).collect(),
        predicate_type: PREDICATE_TYPE.to_owned(),
        predicate: SlsaPredicate {
            build_definition: BuildDefinition {
                build_type: meta.build_type.clone(),
                external_parameters: ExternalParameters {
                    repository: src.repository.clone(),
                    git_ref: src.git_ref.clone(),
                },
                internal_parameters: InternalParameters {
                    tee_platform: meta.tee_platform.clone(),
                    kettle_version: meta.kettle_version.clone(),
                    input_merkle_root: merkle_root,
                    build_nonce: nonce,
                    source_tree_digest: src.tree_digest,
                    lockfile_sha256: lock.lockfile_digest,
                    toolchain: lock
                        .toolchain
                        .iter()
                        .map(|t| ToolDigest {
                            name: t.tool_name.clone(),
                            sha256: t.digest,
                        })
                        .collect(),
                },
                resolved_dependencies: resolved,
            },
            run_details: RunDetails {
                builder: Builder {
                    id: BUILDER_ID.to_owned(),
                },
                metadata: BuildMetadataFields {
                    invocation_id: meta.invocation_id.clone(),
                    started_on: meta.started_on,
                    finished_on: meta.finished_on,
                },
            },
        },
    };
    statement.validate()?;
    Ok(statement)
}

pub fn canonical_encode(statement: &ProvenanceStatement) -> Result<Vec<u8>, ProvenanceError> {
    Ok(canonical::to_canonical_bytes(statement)?)
}

pub fn statement_digest(statement: &ProvenanceStatement) -> Result<Digest32, ProvenanceError> {
    Ok(sha256(&canonical_encode(statement)?))
}

pub fn parse_statement(bytes: &[u8]) -> Result<ProvenanceStatement, ProvenanceError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| ProvenanceError::MalformedStatement(e.to_string()))?;
    for (key, expected) in [("_type", STATEMENT_TYPE), ("predicateType", PREDICATE_TYPE)] {
        if let Some(actual) = value.get(key).and_then(|v| v.as_str()) {
            if actual != expected {
                return Err(ProvenanceError::WrongStatementType(actual.to_owned()));
            }
        }
    }
    let statement: ProvenanceStatement = serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        if msg.starts_with("unknown field") {
            ProvenanceError::UnknownField(msg)
        } else {
            ProvenanceError::MalformedStatement(msg)
        }
    })?;
    statement.validate()?;
    Ok(statement)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{enumerate_inputs, parse_lock_manifest};
    use crate::merkle::build_tree;

    fn lock() -> LockManifest {
        let json = format!(
            r#"{{"source":{{"repository":"https://github.com/org/repo","ref":"refs/heads/main",
            "commit_id":"{}","tree_digest":"{}","signed":true}},"lockfile_sha256":"{}",
            "dependencies":[],"toolchain":[]}}"#,
            "a1".repeat(20),
            "33".repeat(32),
            "44".repeat(32)
        );
        parse_lock_manifest(json.as_bytes()).unwrap()
    }

    fn meta() -> BuildMetadata {
        BuildMetadata {
            build_type: "https://kettle.confidential.ai/cargo-build/v1".into(),
            tee_platform: "sim".into(),
            kettle_version: "0.4.0".into(),
            invocation_id: "build-1".into(),
            started_on: Timestamp::parse("2026-01-15T10:30:00Z").unwrap(),
            finished_on: Timestamp::parse("2026-01-15T10:35:00Z").unwrap(),
        }
    }

    fn statement(outputs: &[(String, Digest32)]) -> Result<ProvenanceStatement, ProvenanceError> {
        let lock = lock();
        let mut im = enumerate_inputs(&lock);
        build_tree(&mut im).unwrap();
        assemble_statement(&im, &lock, outputs, &meta(), Nonce([9; 32]))
    }

    #[test]
    fn no_outputs_rejected() {
        assert!(matches!(statement(&[]), Err(ProvenanceError::NoOutputs)));
    }

    #[test]
    fn zero_deps_gives_only_git_descriptor() {
        let s = statement(&[("a".into(), Digest32([1; 32]))]).unwrap();
        let deps = &s.predicate.build_definition.resolved_dependencies;
        assert_eq!(deps.len(), 1);
        assert_eq!(deps[0].uri, "git+https://github.com/org/repo@refs/heads/main");
        assert_eq!(deps[0].digest[DIGEST_GIT_COMMIT], "a1".repeat(20));
    }

    #[test]
    fn subjects_keep_order() {
        let outs = [
            ("z.bin".to_string(), Digest32([1; 32])),
            ("a.bin".to_string(), Digest32([2; 32])),
        ];
        let s = statement(&outs).unwrap();
        let names: Vec<_> = s.subject.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["z.bin", "a.bin"]);
    }

    #[test]
    fn round_trip_and_strictness() {
        let s = statement(&[("a".into(), Digest32([1; 32]))]).unwrap();
        let bytes = canonical_encode(&s).unwrap();
        assert_eq!(parse_statement(&bytes).unwrap(), s);

        let wrong = String::from_utf8(bytes.clone())
            .unwrap()
            .replace(PREDICATE_TYPE, "https://slsa.dev/provenance/v0.2");
        assert!(matches!(
            parse_statement(wrong.as_bytes()),
            Err(ProvenanceError::WrongStatementType(_))
        ));

        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["debug"] = serde_json::Value::Bool(true);
        assert!(matches!(
            parse_statement(&serde_json::to_vec(&v).unwrap()),
            Err(ProvenanceError::UnknownField(_))
        ));

        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["predicate"]["buildDefinition"]["extra"] = serde_json::json!("x");
        assert!(matches!(
            parse_statement(&serde_json::to_vec(&v).unwrap()),
            Err(ProvenanceError::UnknownField(_))
        ));
    }

    #[test]
    fn digest_changes_with_subject() {
        let a = statement(&[("a".into(), Digest32([1; 32]))]).unwrap();
        let b = statement(&[("a".into(), Digest32([1; 32]))]).unwrap();
        let c = statement(&[("a".into(), Digest32([3; 32]))]).unwrap();
        assert_eq!(statement_digest(&a).unwrap(), statement_digest(&b).unwrap());
        assert_ne!(statement_digest(&a).unwrap(), statement_digest(&c).unwrap());
    }

    #[test]
    fn timestamps_are_strict() {
        assert_eq!(
            Timestamp::parse("2026-01-15T10:30:00Z").unwrap().to_string(),
            "2026-01-15T10:30:00Z"
        );
        assert!(Timestamp::parse("2026-01-15T10:30:00+00:00").is_err());
        assert!(Timestamp::parse("2026-01-15T10:30:00.5Z").is_err());
        assert!(Timestamp::parse("2026-1-15T10:30:00Z").is_err());
    }

    #[test]
    fn inverted_timestamps_invalid() {
        let mut s = statement(&[("a".into(), Digest32([1; 32]))]).unwrap();
        s.predicate.run_details.metadata.started_on = Timestamp::from_unix(i64::from(u32::MAX));
        assert!(matches!(s.validate(), Err(ProvenanceError::MalformedStatement(_))));
    }
}
