//! A small self-contained project and boot chain used by the demo commands
//! and the test suites.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::attestation::{BootComponent, BootKind};
use crate::digest::{sha256, Digest32, Nonce};
use crate::manifest::{enumerate_inputs, parse_lock_manifest, LockManifest};
use crate::merkle::build_tree;
use crate::provenance::{assemble_statement, BuildMetadata, ProvenanceStatement, Timestamp};

pub const SAMPLE_REPOSITORY: &str = "https://github.com/org/repo";
pub const SAMPLE_REF: &str = "refs/heads/main";
pub const SAMPLE_COMMIT: &str = "a1b2c3d4e5f60718293a4b5c6d7e8f90a1b2c3d4";
pub const SAMPLE_SOURCE: &[u8] = b"fn main() { println!(\"hello from an attested build\"); }\n";
pub const SAMPLE_DEP: &[u8] = b"serde 1.0.228 vendored crate payload\n";
pub const SAMPLE_CARGO_LOCK: &[u8] = b"version = 4\n\n[[package]]\nname = \"serde\"\nversion = \"1.0.228\"\n";
pub const SAMPLE_DEP_PATH: &str = "vendor/serde-1.0.228.crate";
pub const SAMPLE_OUTPUT: &str = "dist/my-app";

/// Fixture bytes standing in for each layer of the CVM image.
pub fn default_boot_fixture() -> Vec<BootComponent> {
    vec![
        BootComponent::new(BootKind::Firmware, *b"kettle-sim firmware 1.0"),
        BootComponent::new(BootKind::Kernel, *b"vmlinuz-6.8 kettle"),
        BootComponent::new(BootKind::Cmdline, *b"console=ttyS0 ro init=/sbin/kettle-init"),
        BootComponent::new(BootKind::Initrd, *b"initrd kettle 0.4.0"),
        BootComponent::new(BootKind::VmImage, *b"kettle-base-image 0.4.0"),
        BootComponent::new(BootKind::Kettle, *b"kettle orchestrator 0.4.0"),
    ]
}

/// The fixture boot chain with a modified orchestrator binary.
pub fn tampered_boot_fixture() -> Vec<BootComponent> {
    let mut boot = default_boot_fixture();
    boot[5].content = b"kettle orchestrator 0.4.0 (patched)".to_vec();
    boot
}

#[derive(Debug, Clone)]
pub struct SampleProject {
    pub root: PathBuf,
    pub lock_path: PathBuf,
    pub config_path: PathBuf,
}

impl SampleProject {
    /// Bytes the build command produces for [`SAMPLE_OUTPUT`].
    pub fn expected_output() -> Vec<u8> {
        [SAMPLE_SOURCE, SAMPLE_DEP].concat()
    }
}

pub fn sample_lock_json() -> String {
    format!(
        r#"{{
  "source": {{
    "repository": "{SAMPLE_REPOSITORY}",
    "ref": "{SAMPLE_REF}",
    "commit_id": "{SAMPLE_COMMIT}",
    "tree_digest": "{tree}",
    "signed": false
  }},
  "lockfile_sha256": "{lock}",
  "dependencies": [
    {{
      "name": "serde",
      "version": "1.0.228",
      "purl": "pkg:cargo/serde@1.0.228",
      "sha256": "{dep}",
      "path": "{SAMPLE_DEP_PATH}"
    }}
  ],
  "toolchain": [
    {{ "tool": "sh", "sha256": "{sh}" }},
    {{ "tool": "cat", "sha256": "{cat}" }}
  ]
}}
"#,
        tree = sha256(SAMPLE_SOURCE),
        lock = sha256(SAMPLE_CARGO_LOCK),
        dep = sha256(SAMPLE_DEP),
        sh = sha256(b"toolchain fixture: sh"),
        cat = sha256(b"toolchain fixture: cat"),
    )
}

pub const SAMPLE_CONFIG: &str = r#"{
  "build_type": "https://kettle.confidential.ai/shell-build/v1",
  "commands": [
    ["sh", "-c", "mkdir -p dist && cat src/main.rs vendor/serde-1.0.228.crate > dist/my-app"]
  ],
  "outputs": ["dist/*"],
  "env_allowlist": ["PATH"]
}
"#;

/// Write the sample project under `dir`.
pub fn write_sample_project(dir: &Path) -> io::Result<SampleProject> {
    fs::create_dir_all(dir.join("src"))?;
    fs::create_dir_all(dir.join("vendor"))?;
    fs::write(dir.join("src/main.rs"), SAMPLE_SOURCE)?;
    fs::write(dir.join(SAMPLE_DEP_PATH), SAMPLE_DEP)?;
    fs::write(dir.join("Cargo.lock"), SAMPLE_CARGO_LOCK)?;
    let lock_path = dir.join("kettle.lock.json");
    let config_path = dir.join("kettle-build.json");
    fs::write(&lock_path, sample_lock_json())?;
    fs::write(&config_path, SAMPLE_CONFIG)?;
    Ok(SampleProject {
        root: dir.to_path_buf(),
        lock_path,
        config_path,
    })
}

/// Inputs behind the published provenance example: a Cargo build of
/// `my-app` with one dependency on an SEV-SNP builder.
pub struct ListingInputs {
    pub lock: LockManifest,
    pub outputs: Vec<(String, Digest32)>,
    pub meta: BuildMetadata,
    pub nonce: Nonce,
}

pub const LISTING_SUBJECT: &str = "1d1ea25c371d4f6de8d6e3c26fdad22380f1e2d3c4b5a69788796a5b4c3d2e1f";
pub const LISTING_SERDE: &str = "9a8e94ea00112233445566778899aabbccddeeff001122334455667788888888";

pub fn listing_inputs() -> ListingInputs {
    let lock = format!(
        r#"{{
  "source": {{
    "repository": "{SAMPLE_REPOSITORY}",
    "ref": "{SAMPLE_REF}",
    "commit_id": "{SAMPLE_COMMIT}",
    "tree_digest": "{tree}",
    "signed": false
  }},
  "lockfile_sha256": "{lockfile}",
  "dependencies": [
    {{ "name": "serde", "version": "1.0.228", "purl": "pkg:cargo/serde@1.0.228", "sha256": "{LISTING_SERDE}" }}
  ],
  "toolchain": [ {{ "tool": "rustc", "sha256": "{rustc}" }} ]
}}"#,
        tree = "33".repeat(32),
        lockfile = "44".repeat(32),
        rustc = "55".repeat(32),
    );
    ListingInputs {
        lock: parse_lock_manifest(lock.as_bytes()).expect("listing lock manifest is valid"),
        outputs: vec![("my-app".into(), LISTING_SUBJECT.parse().expect("valid digest"))],
        meta: BuildMetadata {
            build_type: "https://kettle.confidential.ai/cargo-build/v1".into(),
            tee_platform: "sev-snp".into(),
            kettle_version: "0.4.0".into(),
            invocation_id: "build-12345".into(),
            started_on: Timestamp::parse("2026-01-15T10:30:00Z").expect("valid timestamp"),
            finished_on: Timestamp::parse("2026-01-15T10:35:00Z").expect("valid timestamp"),
        },
        nonce: Nonce([0x22; 32]),
    }
}

/// Assemble the provenance statement for [`listing_inputs`].
pub fn listing_statement() -> ProvenanceStatement {
    let inputs = listing_inputs();
    let mut manifest = enumerate_inputs(&inputs.lock);
    build_tree(&mut manifest).expect("non-empty manifest");
    assemble_statement(&manifest, &inputs.lock, &inputs.outputs, &inputs.meta, inputs.nonce)
        .expect("listing statement assembles")
}
