//! End-to-end attested build.
//!
//! Order of operations: verify pinned inputs, enumerate inputs, build the
//! input tree, boot (measure) the CVM, run the build commands in a scrubbed
//! workspace, digest outputs, assemble provenance, and request a report whose
//! report_data is `SHA-256(provenance) || nonce`.

use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};

use chrono::Utc;
use serde::Deserialize;

use crate::attestation::{
    AttestationReport, BootComponent, BootError, Evidence, LaunchedCvm, PlatformCertChain, SimulatedPlatform,
};
use crate::digest::{sha256, Digest32, Nonce};
use crate::manifest::{dir_resolver, enumerate_inputs, verify_pinned_inputs, InputError, LockManifest, SourceIdentity};
use crate::merkle::{build_tree, MerkleError};
use crate::provenance::{assemble_statement, canonical_encode, BuildMetadata, ProvenanceError, Timestamp};
use crate::KETTLE_VERSION;

pub const PROVENANCE_FILE: &str = "provenance.json";
pub const EVIDENCE_FILE: &str = "evidence.json";
pub const BUILD_LOG_FILE: &str = "build.log";
pub const ARTIFACTS_DIR: &str = "artifacts";

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("invalid build configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("build request names source {requested} but the lock manifest pins {pinned}")]
    SourceMismatch { requested: String, pinned: String },
    #[error(transparent)]
    Boot(#[from] BootError),
    #[error(transparent)]
    Merkle(#[from] MerkleError),
    #[error("command not found: {0}")]
    CommandNotFound(String),
    #[error("build command {command:?} failed with exit status {exit_status:?}")]
    BuildFailed { command: String, exit_status: Option<i32> },
    #[error("no files matched the output patterns {0:?}")]
    NoOutputsMatched(Vec<String>),
    #[error(transparent)]
    Provenance(#[from] ProvenanceError),
    #[error("workspace i/o failed")]
    Io(#[from] io::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("bundle is missing {0}")]
    MissingFile(PathBuf),
    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
    #[error("bundle i/o failed")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildConfig {
    pub build_type: String,
    pub commands: Vec<Vec<String>>,
    #[serde(rename = "outputs")]
    pub output_globs: Vec<String>,
    #[serde(default)]
    pub env_allowlist: Vec<String>,
}

impl BuildConfig {
    /// Parse `kettle-build.json`.
    pub fn parse(bytes: &[u8]) -> Result<Self, BuildError> {
        let cfg: BuildConfig = serde_json::from_slice(bytes).map_err(|e| BuildError::Config(e.to_string()))?;
        if cfg.build_type.is_empty() {
            return Err(BuildError::Config("build_type is empty".into()));
        }
        if cfg.commands.is_empty() || cfg.commands.iter().any(Vec::is_empty) {
            return Err(BuildError::Config(
                "commands must be a non-empty list of non-empty argv vectors".into(),
            ));
        }
        if cfg.output_globs.is_empty() {
            return Err(BuildError::Config("outputs must list at least one pattern".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, BuildError> {
        let bytes = fs::read(path).map_err(|e| BuildError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&bytes)
    }
}

#[derive(Debug, Clone)]
pub struct BuildRequest {
    pub source: SourceIdentity,
    pub nonce: Nonce,
    pub config_path: PathBuf,
}

pub trait Clock {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_datetime(Utc::now())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub Timestamp);

impl Clock for FixedClock {
    fn now(&self) -> Timestamp {
        self.0
    }
}

/// Pipeline stages, reported to an optional observer as they begin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    VerifyInputs,
    EnumerateInputs,
    BuildTree,
    Boot,
    ExecuteBuild,
    DigestOutputs,
    AssembleProvenance,
    Attest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn sha256(&self) -> Digest32 {
        sha256(&self.bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceBundle {
    pub artifacts: Vec<Artifact>,
    pub provenance_bytes: Vec<u8>,
    pub report: AttestationReport,
    pub chain: PlatformCertChain,
    pub build_log: Vec<u8>,
}

impl EvidenceBundle {
    pub fn evidence(&self) -> Evidence {
        Evidence {
            report: self.report.clone(),
            chain: self.chain.clone(),
        }
    }

    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.name == name)
    }
}

pub struct Orchestrator<'a> {
    platform: &'a SimulatedPlatform,
    boot: Vec<BootComponent>,
    clock: Box<dyn Clock + 'a>,
    observer: Option<Box<dyn FnMut(Stage) + 'a>>,
    exclude: Vec<PathBuf>,
}

impl<'a> Orchestrator<'a> {
    pub fn new(platform: &'a SimulatedPlatform, boot: Vec<BootComponent>) -> Self {
        Orchestrator {
            platform,
            boot,
            clock: Box::new(SystemClock),
            observer: None,
            exclude: Vec::new(),
        }
    }

    pub fn with_clock(mut self, clock: impl Clock + 'a) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn with_observer(mut self, observer: impl FnMut(Stage) + 'a) -> Self {
        self.observer = Some(Box::new(observer));
        self
    }

    /// Leave `path` out of the workspace copy (e.g. an output directory that
    /// lives inside the source tree).
    pub fn exclude_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.exclude.push(path.into());
        self
    }

    fn stage(&mut self, stage: Stage) {
        if let Some(obs) = self.observer.as_mut() {
            obs(stage);
        }
    }

    /// Full pipeline: launches a fresh CVM from the boot fixture.
    pub fn run_attested_build(
        &mut self,
        request: &BuildRequest,
        lock: &LockManifest,
        source_dir: &Path,
    ) -> Result<EvidenceBundle, BuildError> {
        let config = self.preflight(request, lock, source_dir)?;
        let input_root = self.commit_inputs(lock)?;
        self.stage(Stage::Boot);
        let cvm = self.platform.launch(&self.boot, Digest32::zero())?;
        self.build_inside(&cvm, request, lock, &config, source_dir, input_root)
    }

    /// Pipeline inside an already-launched CVM (the confidential flow boots
    /// before any source arrives).
    pub fn run_in_cvm(
        &mut self,
        cvm: &LaunchedCvm<'_>,
        request: &BuildRequest,
        lock: &LockManifest,
        source_dir: &Path,
    ) -> Result<EvidenceBundle, BuildError> {
        let config = self.preflight(request, lock, source_dir)?;
        let input_root = self.commit_inputs(lock)?;
        self.build_inside(cvm, request, lock, &config, source_dir, input_root)
    }

    fn preflight(
        &mut self,
        request: &BuildRequest,
        lock: &LockManifest,
        source_dir: &Path,
    ) -> Result<BuildConfig, BuildError> {
        if request.source != lock.source {
            return Err(BuildError::SourceMismatch {
                requested: format!("{}@{}", request.source.repository, request.source.commit_id),
                pinned: format!("{}@{}", lock.source.repository, lock.source.commit_id),
            });
        }
        let config = BuildConfig::load(&request.config_path)?;
        self.stage(Stage::VerifyInputs);
        verify_pinned_inputs(lock, dir_resolver(source_dir))?;
        Ok(config)
    }

    fn commit_inputs(&mut self, lock: &LockManifest) -> Result<crate::manifest::InputManifest, BuildError> {
        self.stage(Stage::EnumerateInputs);
        let mut manifest = enumerate_inputs(lock);
        self.stage(Stage::BuildTree);
        build_tree(&mut manifest)?;
        Ok(manifest)
    }

    fn build_inside(
        &mut self,
        cvm: &LaunchedCvm<'_>,
        request: &BuildRequest,
        lock: &LockManifest,
        config: &BuildConfig,
        source_dir: &Path,
        manifest: crate::manifest::InputManifest,
    ) -> Result<EvidenceBundle, BuildError> {
        let workspace = tempfile::Builder::new().prefix("kettle-ws-").tempdir()?;
        copy_tree(source_dir, workspace.path(), &self.exclude)?;

        let started_on = self.clock.now();
        self.stage(Stage::ExecuteBuild);
        let build_log = execute_build(config, workspace.path())?;
        let finished_on = self.clock.now();

        self.stage(Stage::DigestOutputs);
        let outputs = digest_outputs(workspace.path(), &config.output_globs)?;
        let artifacts = outputs
            .iter()
            .map(|(name, _)| {
                Ok(Artifact {
                    name: name.clone(),
                    bytes: fs::read(workspace.path().join(name))?,
                })
            })
            .collect::<Result<Vec<_>, io::Error>>()?;

        self.stage(Stage::AssembleProvenance);
        let meta = BuildMetadata {
            build_type: config.build_type.clone(),
            tee_platform: cvm.platform_id().as_str().to_owned(),
            kettle_version: KETTLE_VERSION.to_owned(),
            invocation_id: format!("build-{}", hex::encode(&request.nonce.0[..8])),
            started_on,
            finished_on,
        };
        let statement = assemble_statement(&manifest, lock, &outputs, &meta, request.nonce)?;
        let provenance_bytes = canonical_encode(&statement)?;

        self.stage(Stage::Attest);
        let report = cvm.report(report_data_for(&sha256(&provenance_bytes), &request.nonce));

        Ok(EvidenceBundle {
            artifacts,
            provenance_bytes,
            report,
            chain: cvm.chain().clone(),
            build_log,
        })
    }
}

/// `digest || nonce`, the 64-byte report_data of a build report.
pub fn report_data_for(provenance_digest: &Digest32, nonce: &Nonce) -> [u8; 64] {
    let mut out = [0u8; 64];
    out[..32].copy_from_slice(&provenance_digest.0);
    out[32..].copy_from_slice(&nonce.0);
    out
}

/// Convenience wrapper over [`Orchestrator::run_attested_build`].
pub fn run_attested_build(
    request: &BuildRequest,
    lock: &LockManifest,
    source_dir: &Path,
    platform: &SimulatedPlatform,
    boot: &[BootComponent],
) -> Result<EvidenceBundle, BuildError> {
    Orchestrator::new(platform, boot.to_vec()).run_attested_build(request, lock, source_dir)
}

fn copy_tree(from: &Path, to: &Path, exclude: &[PathBuf]) -> io::Result<()> {
    let excluded: Vec<PathBuf> = exclude.iter().filter_map(|p| p.canonicalize().ok()).collect();
    fn walk(from: &Path, to: &Path, excluded: &[PathBuf]) -> io::Result<()> {
        for entry in fs::read_dir(from)? {
            let entry = entry?;
            let path = entry.path();
            if entry.file_name() == ".git" {
                continue;
            }
            if let Ok(canon) = path.canonicalize() {
                if excluded.contains(&canon) {
                    continue;
                }
            }
            let target = to.join(entry.file_name());
            let meta = fs::metadata(&path)?;
            if meta.is_dir() {
                fs::create_dir_all(&target)?;
                walk(&path, &target, excluded)?;
            } else if meta.is_file() {
                fs::copy(&path, &target)?;
            }
        }
        Ok(())
    }
    walk(from, to, &excluded)
}

/// Run each configured command in `workspace` with a scrubbed environment:
/// only variables named in the allow-list survive, plus `SOURCE_DATE_EPOCH=0`
/// and `HOME=<workspace>`. Returns the combined build log.
pub fn execute_build(config: &BuildConfig, workspace: &Path) -> Result<Vec<u8>, BuildError> {
    let mut log = Vec::new();
    for argv in &config.commands {
        let rendered = argv.join(" ");
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..])
            .current_dir(workspace)
            .env_clear()
            .stdin(Stdio::null());
        for name in &config.env_allowlist {
            if let Some(value) = std::env::var_os(name) {
                cmd.env(name, value);
            }
        }
        cmd.env("SOURCE_DATE_EPOCH", "0").env("HOME", workspace);

        let output = cmd.output().map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => BuildError::CommandNotFound(argv[0].clone()),
            _ => BuildError::Io(e),
        })?;
        log.extend_from_slice(format!("$ {rendered}\n").as_bytes());
        log.extend_from_slice(&output.stdout);
        log.extend_from_slice(&output.stderr);
        if !output.status.success() {
            return Err(BuildError::BuildFailed {
                command: rendered,
                exit_status: output.status.code(),
            });
        }
    }
    Ok(log)
}

/// Digest every regular file matching any pattern (relative to `workspace`).
/// Names are workspace-relative with `/` separators, sorted and deduplicated.
pub fn digest_outputs(workspace: &Path, globs: &[String]) -> Result<Vec<(String, Digest32)>, BuildError> {
    let base = glob::Pattern::escape(&workspace.to_string_lossy());
    let mut names = Vec::new();
    for pattern in globs {
        let full = format!("{base}/{pattern}");
        let paths =
            glob::glob(&full).map_err(|e| BuildError::Config(format!("bad output pattern {pattern:?}: {e}")))?;
        for path in paths.flatten() {
            if !path.is_file() {
                continue;
            }
            let rel = path
                .strip_prefix(workspace)
                .expect("glob results live under the workspace");
            names.push(relative_name(rel));
        }
    }
    names.sort();
    names.dedup();
    if names.is_empty() {
        return Err(BuildError::NoOutputsMatched(globs.to_vec()));
    }
    let digested = names
        .into_iter()
        .map(|name| {
            let digest = sha256(&fs::read(workspace.join(&name))?);
            Ok((name, digest))
        })
        .collect::<io::Result<_>>()?;
    Ok(digested)
}

fn relative_name(rel: &Path) -> String {
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn safe_relative(name: &str) -> Option<PathBuf> {
    let path = PathBuf::from(name);
    let ok = !name.is_empty() && path.components().all(|c| matches!(c, Component::Normal(_)));
    ok.then_some(path)
}

/// Layout: `artifacts/<name>`, `provenance.json`, `evidence.json`, `build.log`.
pub fn write_bundle(bundle: &EvidenceBundle, out_dir: &Path) -> Result<(), BundleError> {
    let artifacts_dir = out_dir.join(ARTIFACTS_DIR);
    fs::create_dir_all(&artifacts_dir)?;
    for artifact in &bundle.artifacts {
        let rel = safe_relative(&artifact.name)
            .ok_or_else(|| BundleError::CorruptBundle(format!("unsafe artifact name {:?}", artifact.name)))?;
        let path = artifacts_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, &artifact.bytes)?;
    }
    fs::write(out_dir.join(PROVENANCE_FILE), &bundle.provenance_bytes)?;
    fs::write(out_dir.join(EVIDENCE_FILE), bundle.evidence().to_json())?;
    fs::write(out_dir.join(BUILD_LOG_FILE), &bundle.build_log)?;
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<EvidenceBundle, BundleError> {
    let read_required = |name: &str| -> Result<Vec<u8>, BundleError> {
        let path = dir.join(name);
        fs::read(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => BundleError::MissingFile(path),
            _ => BundleError::Io(e),
        })
    };
    let provenance_bytes = read_required(PROVENANCE_FILE)?;
    let evidence = Evidence::from_json(&read_required(EVIDENCE_FILE)?).map_err(BundleError::CorruptBundle)?;
    let build_log = fs::read(dir.join(BUILD_LOG_FILE)).unwrap_or_default();

    let artifacts_dir = dir.join(ARTIFACTS_DIR);
    if !artifacts_dir.is_dir() {
        return Err(BundleError::MissingFile(artifacts_dir));
    }
    let mut artifacts = Vec::new();
    collect_files(&artifacts_dir, &artifacts_dir, &mut artifacts)?;
    artifacts.sort_by(|a, b| a.name.cmp(&b.name));

    Ok(EvidenceBundle {
        artifacts,
        provenance_bytes,
        report: evidence.report,
        chain: evidence.chain,
        build_log,
    })
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<Artifact>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.is_file() {
            let name = relative_name(path.strip_prefix(root).expect("walk stays under root"));
            out.push(Artifact {
                name,
                bytes: fs::read(&path)?,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(commands: Vec<Vec<&str>>, outputs: &[&str], env: &[&str]) -> BuildConfig {
        BuildConfig {
            build_type: "https://example.com/build/v1".into(),
            commands: commands
                .into_iter()
                .map(|c| c.into_iter().map(String::from).collect())
                .collect(),
            output_globs: outputs.iter().map(|s| s.to_string()).collect(),
            env_allowlist: env.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn config_validation() {
        assert!(
            BuildConfig::parse(br#"{"build_type":"x","commands":[["true"]],"outputs":["*"],"env_allowlist":[]}"#)
                .is_ok()
        );
        for bad in [
            r#"{"build_type":"x","commands":[],"outputs":["*"]}"#,
            r#"{"build_type":"x","commands":[[]],"outputs":["*"]}"#,
            r#"{"build_type":"x","commands":[["true"]],"outputs":[]}"#,
            r#"{"build_type":"x","commands":[["true"]],"outputs":["*"],"extra":1}"#,
        ] {
            assert!(
                matches!(BuildConfig::parse(bad.as_bytes()), Err(BuildError::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn noop_and_failing_commands() {
        let ws = tempfile::tempdir().unwrap();
        assert!(execute_build(&config(vec![vec!["true"]], &["*"], &[]), ws.path()).is_ok());
        assert!(matches!(
            execute_build(&config(vec![vec!["false"]], &["*"], &[]), ws.path()),
            Err(BuildError::BuildFailed {
                exit_status: Some(1),
                ..
            })
        ));
        assert!(matches!(
            execute_build(
                &config(vec![vec!["definitely-not-a-command-kettle"]], &["*"], &[]),
                ws.path()
            ),
            Err(BuildError::CommandNotFound(_))
        ));
    }

    #[test]
    fn environment_is_scrubbed() {
        std::env::set_var("KETTLE_TEST_SECRET", "leak");
        let ws = tempfile::tempdir().unwrap();
        let cmd = vec!["sh", "-c", "env > env.txt"];
        execute_build(&config(vec![cmd], &["*"], &["PATH"]), ws.path()).unwrap();
        let env = fs::read_to_string(ws.path().join("env.txt")).unwrap();
        assert!(!env.contains("KETTLE_TEST_SECRET"));
        assert!(env.contains("SOURCE_DATE_EPOCH=0"));
        assert!(env.contains(&format!("HOME={}", ws.path().display())));
        assert!(env.lines().any(|l| l.starts_with("PATH=")));
    }

    #[test]
    fn outputs_digested_and_sorted() {
        let ws = tempfile::tempdir().unwrap();
        fs::write(ws.path().join("b.bin"), b"bbb").unwrap();
        fs::write(ws.path().join("a.bin"), b"aaa").unwrap();
        fs::write(ws.path().join("c.txt"), b"ccc").unwrap();
        let out = digest_outputs(ws.path(), &["*.bin".into(), "a.*".into()]).unwrap();
        assert_eq!(
            out,
            vec![("a.bin".into(), sha256(b"aaa")), ("b.bin".into(), sha256(b"bbb"))]
        );
        assert!(matches!(
            digest_outputs(ws.path(), &["*.exe".into()]),
            Err(BuildError::NoOutputsMatched(_))
        ));
    }

    #[test]
    fn unsafe_names_refused() {
        assert!(safe_relative("a/b").is_some());
        assert!(safe_relative("../x").is_none());
        assert!(safe_relative("/etc/passwd").is_none());
        assert!(safe_relative("").is_none());
    }
}
