//! Offline verification of an evidence bundle.
//!
//! Steps run in order and stop at the first failure:
//!
//! 1. attestation: report signature chains to a trusted root, the launch
//!    measurement is allow-listed, and the nonce matches the request
//! 2. binding: `SHA-256(provenance.json)` equals the leading half of report_data
//! 3. artifact: every artifact's digest equals its subject digest
//! 4. policy: externalParameters equal what the verifier expects

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::attestation::{verify_report, PlatformId, TrustStore};
use crate::digest::{sha256, Digest48, Nonce};
use crate::orchestrator::{BundleError, EvidenceBundle};
use crate::provenance::parse_statement;

/// `MAJOR.MINOR.PATCH`, optionally prefixed with `v`. Pre-release and build
/// suffixes are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Version {
    pub major: u64,
    pub minor: u64,
    pub patch: u64,
}

impl Version {
    pub const fn new(major: u64, minor: u64, patch: u64) -> Self {
        Version { major, minor, patch }
    }
}

impl FromStr for Version {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let body = s.strip_prefix('v').unwrap_or(s);
        let parts: Vec<&str> = body.split('.').collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(format!("version {s:?} must have three components"));
        };
        let num = |p: &str| -> Result<u64, String> {
            if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) || (p.len() > 1 && p.starts_with('0')) {
                return Err(format!("bad version component {p:?} in {s:?}"));
            }
            p.parse().map_err(|_| format!("version component {p:?} out of range"))
        };
        Ok(Version::new(num(a)?, num(b)?, num(c)?))
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)
    }
}

impl Serialize for Version {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Version {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllowListEntry {
    #[serde(rename = "measurement_hex")]
    pub measurement: Digest48,
    pub kettle_version: Version,
    pub platform_id: PlatformId,
    pub min_firmware: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AllowListError {
    #[error("malformed allow-list: {0}")]
    MalformedAllowList(String),
    #[error("duplicate allow-list entry for measurement {measurement} on {platform}")]
    DuplicateEntry {
        measurement: Digest48,
        platform: PlatformId,
    },
}

pub fn load_allowlist(bytes: &[u8]) -> Result<Vec<AllowListEntry>, AllowListError> {
    let entries: Vec<AllowListEntry> =
        serde_json::from_slice(bytes).map_err(|e| AllowListError::MalformedAllowList(e.to_string()))?;
    let mut seen = HashSet::new();
    for e in &entries {
        if !seen.insert((e.measurement, e.platform_id)) {
            return Err(AllowListError::DuplicateEntry {
                measurement: e.measurement,
                platform: e.platform_id,
            });
        }
    }
    Ok(entries)
}

pub fn allowlist_to_json(entries: &[AllowListEntry]) -> Vec<u8> {
    serde_json::to_vec_pretty(entries).expect("allow-list serializes")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationPolicy {
    pub allowlist: Vec<AllowListEntry>,
    pub min_version: Version,
    pub required_platform: PlatformId,
    pub expected_repository: String,
    pub expected_ref: String,
    pub expected_nonce: Nonce,
}

/// The allow-list entry that admits `measurement`, if any.
pub fn check_allowlist<'p>(
    measurement: &Digest48,
    chain_firmware: u32,
    policy: &'p VerificationPolicy,
) -> Option<&'p AllowListEntry> {
    policy.allowlist.iter().find(|e| {
        e.measurement == *measurement
            && e.kettle_version >= policy.min_version
            && e.platform_id == policy.required_platform
            && chain_firmware >= e.min_firmware
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Step {
    Attestation,
    Binding,
    Artifact,
    Policy,
}

impl Step {
    pub const ALL: [Step; 4] = [Step::Attestation, Step::Binding, Step::Artifact, Step::Policy];
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Step::Attestation => "attestation",
            Step::Binding => "binding",
            Step::Artifact => "artifact",
            Step::Policy => "policy",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepResult {
    pub step: Step,
    pub passed: bool,
    /// False for steps skipped after an earlier failure.
    pub evaluated: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub passed: bool,
    pub step_results: Vec<StepResult>,
}

impl VerificationOutcome {
    pub fn failed_step(&self) -> Option<Step> {
        self.step_results
            .iter()
            .find(|r| r.evaluated && !r.passed)
            .map(|r| r.step)
    }

    pub fn passed_steps(&self) -> usize {
        self.step_results.iter().filter(|r| r.passed).count()
    }
}

struct Recorder {
    results: Vec<StepResult>,
}

impl Recorder {
    fn pass(&mut self, step: Step, reason: String) {
        self.results.push(StepResult {
            step,
            passed: true,
            evaluated: true,
            reason,
        });
    }

    fn fail(mut self, step: Step, reason: String) -> VerificationOutcome {
        self.results.retain(|r| r.step != step);
        self.results.push(StepResult {
            step,
            passed: false,
            evaluated: true,
            reason,
        });
        // Anything recorded after the failing step is discarded.
        let pos = Step::ALL.iter().position(|s| *s == step).unwrap();
        self.results
            .retain(|r| Step::ALL.iter().position(|s| *s == r.step).unwrap() <= pos);
        for later in &Step::ALL[pos + 1..] {
            self.results.push(StepResult {
                step: *later,
                passed: false,
                evaluated: false,
                reason: "not evaluated".into(),
            });
        }
        VerificationOutcome {
            passed: false,
            step_results: self.results,
        }
    }

    fn finish(self) -> VerificationOutcome {
        VerificationOutcome {
            passed: self.results.iter().all(|r| r.passed),
            step_results: self.results,
        }
    }
}

/// Run all verification steps. Pure: touches nothing but its arguments.
pub fn verify_bundle(
    bundle: &EvidenceBundle,
    policy: &VerificationPolicy,
    store: &TrustStore,
) -> Result<VerificationOutcome, BundleError> {
    let mut rec = Recorder {
        results: Vec::with_capacity(4),
    };
    let report = &bundle.report;

    // Step 1.
    if let Err(why) = verify_report(report, &bundle.chain, store) {
        return Ok(rec.fail(Step::Attestation, format!("report rejected: {why}")));
    }
    let Some(entry) = check_allowlist(&report.measurement, bundle.chain.firmware_version, policy) else {
        return Ok(rec.fail(
            Step::Attestation,
            format!(
                "launch measurement {} is not allow-listed for {} at version >= {} with firmware {}",
                report.measurement, policy.required_platform, policy.min_version, bundle.chain.firmware_version
            ),
        ));
    };
    if report.report_data_tail() != policy.expected_nonce.0 {
        return Ok(rec.fail(
            Step::Attestation,
            format!(
                "report nonce {} does not match the request nonce",
                hex::encode(report.report_data_tail())
            ),
        ));
    }
    rec.pass(
        Step::Attestation,
        format!(
            "report chains to a trusted root; measurement matches allow-listed release {}",
            entry.kettle_version
        ),
    );

    // Step 2.
    let actual = sha256(&bundle.provenance_bytes);
    if actual != report.report_data_digest() {
        return Ok(rec.fail(
            Step::Binding,
            format!(
                "SHA-256(provenance.json) = {actual} but report_data commits to {}",
                report.report_data_digest()
            ),
        ));
    }
    let statement = parse_statement(&bundle.provenance_bytes)
        .map_err(|e| BundleError::CorruptBundle(format!("attested provenance does not parse: {e}")))?;
    if statement.build_nonce() != policy.expected_nonce {
        return Ok(rec.fail(
            Step::Attestation,
            "provenance buildNonce does not match the request nonce".into(),
        ));
    }
    rec.pass(Step::Binding, format!("provenance digest {actual} matches report_data"));

    // Step 3.
    if bundle.artifacts.is_empty() {
        return Ok(rec.fail(Step::Artifact, "bundle contains no artifacts".into()));
    }
    for artifact in &bundle.artifacts {
        let digest = artifact.sha256();
        match statement.subject_digest(&artifact.name) {
            None => {
                return Ok(rec.fail(
                    Step::Artifact,
                    format!("artifact {:?} is not a subject of the provenance", artifact.name),
                ))
            }
            Some(expected) if expected != digest => {
                return Ok(rec.fail(
                    Step::Artifact,
                    format!(
                        "artifact {:?} has digest {digest}, provenance records {expected}",
                        artifact.name
                    ),
                ))
            }
            Some(_) => {}
        }
    }
    rec.pass(
        Step::Artifact,
        format!(
            "{} artifact digest(s) match the provenance subjects",
            bundle.artifacts.len()
        ),
    );

    // Step 4.
    let ext = statement.external_parameters();
    if ext.repository != policy.expected_repository || ext.git_ref != policy.expected_ref {
        return Ok(rec.fail(
            Step::Policy,
            format!(
                "externalParameters {}@{} differ from expected {}@{}",
                ext.repository, ext.git_ref, policy.expected_repository, policy.expected_ref
            ),
        ));
    }
    rec.pass(Step::Policy, format!("built from {}@{}", ext.repository, ext.git_ref));

    Ok(rec.finish())
}
