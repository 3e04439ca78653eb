#![allow(dead_code)]

use std::path::Path;

use kettle_core::attestation::{measure_boot_chain, platform_keygen, PlatformId, PlatformKeys, TrustStore};
use kettle_core::manifest::{parse_lock_manifest, LockManifest};
use kettle_core::orchestrator::{BuildRequest, EvidenceBundle, FixedClock, Orchestrator};
use kettle_core::provenance::Timestamp;
use kettle_core::sample::{default_boot_fixture, write_sample_project, SampleProject, SAMPLE_REF, SAMPLE_REPOSITORY};
use kettle_core::verifier::{AllowListEntry, VerificationPolicy, Version};
use kettle_core::Nonce;

pub const SEED: [u8; 32] = [7; 32];
pub const NONCE: Nonce = Nonce([0xab; 32]);

pub fn keys() -> PlatformKeys {
    platform_keygen(Some(SEED), PlatformId::Sim, 1)
}

pub fn store() -> TrustStore {
    keys().trust_store()
}

pub fn policy(nonce: Nonce) -> VerificationPolicy {
    VerificationPolicy {
        allowlist: vec![AllowListEntry {
            measurement: measure_boot_chain(&default_boot_fixture()).unwrap(),
            kettle_version: Version::new(0, 4, 0),
            platform_id: PlatformId::Sim,
            min_firmware: 1,
        }],
        min_version: Version::new(0, 4, 0),
        required_platform: PlatformId::Sim,
        expected_repository: SAMPLE_REPOSITORY.into(),
        expected_ref: SAMPLE_REF.into(),
        expected_nonce: nonce,
    }
}

pub fn project(dir: &Path) -> (SampleProject, LockManifest) {
    let project = write_sample_project(dir).unwrap();
    let lock = parse_lock_manifest(&std::fs::read(&project.lock_path).unwrap()).unwrap();
    (project, lock)
}

pub fn request(project: &SampleProject, lock: &LockManifest, nonce: Nonce) -> BuildRequest {
    BuildRequest {
        source: lock.source.clone(),
        nonce,
        config_path: project.config_path.clone(),
    }
}

/// Build the sample project with a fixed clock.
pub fn build(dir: &Path, nonce: Nonce) -> EvidenceBundle {
    let (project, lock) = project(dir);
    let platform = keys().into_platform();
    let bundle = Orchestrator::new(&platform, default_boot_fixture())
        .with_clock(FixedClock(Timestamp::from_unix(1_768_473_000)))
        .run_attested_build(&request(&project, &lock, nonce), &lock, dir)
        .unwrap();
    bundle
}
