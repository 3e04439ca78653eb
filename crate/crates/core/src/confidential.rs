//! Pre-attested confidential builds.
//!
//! Stage 1: the requester picks `nonce_p`; the host launches a CVM with
//! `host_data = nonce_p`; the CVM creates an X25519 channel key and reports
//! with `report_data = SHA-256(channel_pk || nonce_p) || 0^32`.
//!
//! Stage 2: the requester checks the report chain, the launch measurement,
//! host_data and the channel binding. Any failure ends the session before a
//! single source byte is sent.
//!
//! Stage 3: the source archive is sealed to the channel key (ephemeral X25519,
//! HKDF-SHA-256, ChaCha20-Poly1305) and relayed through the host as
//! ciphertext. The CVM unseals it and runs the ordinary attested build, which
//! produces a second report over the provenance.
//!
//! The TLS session of a real deployment is replaced by this one-shot sealed
//! payload.

use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce as AeadNonce};
use hkdf::Hkdf;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use x25519_dalek::{EphemeralSecret, PublicKey, StaticSecret};

use crate::attestation::{
    verify_report, AttestationReport, BootComponent, BootError, Evidence, LaunchedCvm, PlatformCertChain,
    ReportRejection, SimulatedPlatform, TrustStore,
};
use crate::digest::{decode_hex_array, sha256, Digest32, Nonce};
use crate::manifest::parse_lock_manifest;
use crate::orchestrator::{BuildError, BuildRequest, Clock, EvidenceBundle, Orchestrator, SystemClock};
use crate::verifier::{check_allowlist, VerificationPolicy};

pub const AAD_CONTEXT: &[u8] = b"kettle-confidential-v1";
const LOCK_FILE: &str = "kettle.lock.json";
const CONFIG_FILE: &str = "kettle-build.json";

#[derive(Debug, thiserror::Error)]
pub enum ConfidentialError {
    #[error("source may only be sealed to a verified pre-attestation")]
    PreAttestationNotVerified,
    #[error("sealed payload failed authentication")]
    Decrypt,
    #[error("channel key agreement produced a non-contributory secret")]
    WeakChannelKey,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("session aborted before disclosure: {reason}")]
    AbortedBeforeDisclosure {
        reason: PreAttestationRejection,
        transcript: Box<SessionTranscript>,
    },
    #[error(transparent)]
    Boot(#[from] BootError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("i/o failed")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PreAttestationRejection {
    #[error("attestation rejected: {0}")]
    Attestation(ReportRejection),
    #[error("launch measurement is not an allow-listed release")]
    MeasurementNotAllowed,
    #[error("host_data does not carry this session's nonce (stale or shared CVM)")]
    StaleOrSharedCvm,
    #[error("report_data does not bind the offered channel key to this nonce")]
    ChannelBindingMismatch,
}

impl PreAttestationRejection {
    /// Stable identifier, e.g. `StaleOrSharedCvm` or `Attestation.UnknownRoot`.
    pub fn code(&self) -> String {
        match self {
            PreAttestationRejection::Attestation(r) => format!("Attestation.{r:?}"),
            other => format!("{other:?}"),
        }
    }
}

/// Fresh 32-byte launch nonce.
pub fn client_begin() -> Nonce {
    Nonce::random()
}

/// `SHA-256(channel_pk || nonce_p) || 0^32`.
pub fn channel_binding(channel_public_key: &[u8; 32], nonce_p: &Nonce) -> [u8; 64] {
    let mut input = [0u8; 64];
    input[..32].copy_from_slice(channel_public_key);
    input[32..].copy_from_slice(&nonce_p.0);
    let mut out = [0u8; 64];
    out[..32].copy_from_slice(&sha256(&input).0);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreAttestation {
    pub nonce_p: Nonce,
    pub channel_public_key: [u8; 32],
    pub report: AttestationReport,
    pub chain: PlatformCertChain,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPreAttestation {
    nonce_p_hex: String,
    channel_public_key_hex: String,
    evidence: serde_json::Value,
}

impl PreAttestation {
    pub fn to_json(&self) -> Vec<u8> {
        let evidence = Evidence {
            report: self.report.clone(),
            chain: self.chain.clone(),
        };
        let raw = RawPreAttestation {
            nonce_p_hex: self.nonce_p.to_hex(),
            channel_public_key_hex: hex::encode(self.channel_public_key),
            evidence: serde_json::from_slice(&evidence.to_json()).expect("evidence is JSON"),
        };
        serde_json::to_vec(&raw).expect("pre-attestation serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ConfidentialError> {
        let bad = |e: String| ConfidentialError::Malformed(e);
        let raw: RawPreAttestation = serde_json::from_slice(bytes).map_err(|e| bad(e.to_string()))?;
        let evidence = Evidence::from_json(raw.evidence.to_string().as_bytes()).map_err(bad)?;
        Ok(PreAttestation {
            nonce_p: Nonce::from_hex(&raw.nonce_p_hex).map_err(|e| bad(e.to_string()))?,
            channel_public_key: decode_hex_array(&raw.channel_public_key_hex).map_err(|e| bad(e.to_string()))?,
            report: evidence.report,
            chain: evidence.chain,
        })
    }
}

/// The guest side of the session. The channel secret stays inside.
pub struct CvmActor<'p> {
    cvm: LaunchedCvm<'p>,
    channel_secret: StaticSecret,
    pre_attestation: PreAttestation,
}

/// Launch a CVM for `nonce_p`, create its channel key, and pre-attest it.
pub fn cvm_preattest<'p>(
    platform: &'p SimulatedPlatform,
    boot: &[BootComponent],
    nonce_p: Nonce,
) -> Result<CvmActor<'p>, BootError> {
    let cvm = platform.launch(boot, Digest32(nonce_p.0))?;
    let channel_secret = StaticSecret::random_from_rng(rand::rngs::OsRng);
    let channel_public_key = PublicKey::from(&channel_secret).to_bytes();
    let report = cvm.report(channel_binding(&channel_public_key, &nonce_p));
    let pre_attestation = PreAttestation {
        nonce_p,
        channel_public_key,
        report,
        chain: cvm.chain().clone(),
    };
    Ok(CvmActor {
        cvm,
        channel_secret,
        pre_attestation,
    })
}

impl<'p> CvmActor<'p> {
    pub fn pre_attestation(&self) -> &PreAttestation {
        &self.pre_attestation
    }

    pub fn cvm(&self) -> &LaunchedCvm<'p> {
        &self.cvm
    }

    pub fn unseal(&self, sealed: &SealedSource) -> Result<Vec<u8>, ConfidentialError> {
        if sealed.aad != expected_aad(&self.pre_attestation.nonce_p) {
            return Err(ConfidentialError::Decrypt);
        }
        let shared = self
            .channel_secret
            .diffie_hellman(&PublicKey::from(sealed.ephemeral_public_key));
        if !shared.was_contributory() {
            return Err(ConfidentialError::WeakChannelKey);
        }
        let cipher = ChaCha20Poly1305::new(&derive_key(shared.as_bytes(), &sealed.aad));
        cipher
            .decrypt(
                AeadNonce::from_slice(&sealed.aead_nonce),
                Payload {
                    msg: &sealed.ciphertext,
                    aad: &sealed.aad,
                },
            )
            .map_err(|_| ConfidentialError::Decrypt)
    }
}

/// The requester's three Stage 2 questions: code identity (measurement), CVM
/// uniqueness (host_data), freshness and channel binding (report_data).
pub fn client_verify_preattestation(
    pa: &PreAttestation,
    nonce_p: &Nonce,
    policy: &VerificationPolicy,
    store: &TrustStore,
) -> Result<(), PreAttestationRejection> {
    verify_report(&pa.report, &pa.chain, store).map_err(PreAttestationRejection::Attestation)?;
    if check_allowlist(&pa.report.measurement, pa.chain.firmware_version, policy).is_none() {
        return Err(PreAttestationRejection::MeasurementNotAllowed);
    }
    if pa.report.host_data.0 != nonce_p.0 {
        return Err(PreAttestationRejection::StaleOrSharedCvm);
    }
    if pa.report.report_data != channel_binding(&pa.channel_public_key, nonce_p) {
        return Err(PreAttestationRejection::ChannelBindingMismatch);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedSource {
    pub ephemeral_public_key: [u8; 32],
    pub aead_nonce: [u8; 12],
    pub ciphertext: Vec<u8>,
    pub aad: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSealed {
    ephemeral_public_key_hex: String,
    aead_nonce_hex: String,
    ciphertext_b64: String,
    aad_hex: String,
}

impl SealedSource {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(&RawSealed {
            ephemeral_public_key_hex: hex::encode(self.ephemeral_public_key),
            aead_nonce_hex: hex::encode(self.aead_nonce),
            ciphertext_b64: B64.encode(&self.ciphertext),
            aad_hex: hex::encode(&self.aad),
        })
        .expect("sealed payload serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ConfidentialError> {
        let bad = |e: String| ConfidentialError::Malformed(e);
        let raw: RawSealed = serde_json::from_slice(bytes).map_err(|e| bad(e.to_string()))?;
        Ok(SealedSource {
            ephemeral_public_key: decode_hex_array(&raw.ephemeral_public_key_hex).map_err(|e| bad(e.to_string()))?,
            aead_nonce: decode_hex_array(&raw.aead_nonce_hex).map_err(|e| bad(e.to_string()))?,
            ciphertext: B64.decode(&raw.ciphertext_b64).map_err(|e| bad(e.to_string()))?,
            aad: hex::decode(&raw.aad_hex).map_err(|e| bad(e.to_string()))?,
        })
    }
}

fn expected_aad(nonce_p: &Nonce) -> Vec<u8> {
    [AAD_CONTEXT, &nonce_p.0[..]].concat()
}

fn derive_key(shared: &[u8; 32], info: &[u8]) -> Key {
    let mut key = Key::default();
    Hkdf::<Sha256>::new(None, shared)
        .expand(info, &mut key)
        .expect("32 bytes is a valid HKDF-SHA-256 output length");
    key
}

fn seal_to(
    channel_public_key: &[u8; 32],
    nonce_p: &Nonce,
    plaintext: &[u8],
) -> Result<SealedSource, ConfidentialError> {
    let ephemeral = EphemeralSecret::random_from_rng(rand::rngs::OsRng);
    let ephemeral_public_key = PublicKey::from(&ephemeral).to_bytes();
    let shared = ephemeral.diffie_hellman(&PublicKey::from(*channel_public_key));
    if !shared.was_contributory() {
        return Err(ConfidentialError::WeakChannelKey);
    }
    let aad = expected_aad(nonce_p);
    let mut aead_nonce = [0u8; 12];
    rand::rngs::OsRng.fill_bytes(&mut aead_nonce);
    let cipher = ChaCha20Poly1305::new(&derive_key(shared.as_bytes(), &aad));
    let ciphertext = cipher
        .encrypt(
            AeadNonce::from_slice(&aead_nonce),
            Payload {
                msg: plaintext,
                aad: &aad,
            },
        )
        .expect("ChaCha20-Poly1305 encryption does not fail for in-memory buffers");
    Ok(SealedSource {
        ephemeral_public_key,
        aead_nonce,
        ciphertext,
        aad,
    })
}

/// Requester-side session state. Sealing is refused until a pre-attestation
/// for this session's nonce has been verified.
pub struct Requester {
    nonce_p: Nonce,
    policy: VerificationPolicy,
    store: TrustStore,
    verified: Option<PreAttestation>,
}

impl Requester {
    pub fn new(policy: VerificationPolicy, store: TrustStore) -> Self {
        Requester {
            nonce_p: client_begin(),
            policy,
            store,
            verified: None,
        }
    }

    pub fn nonce_p(&self) -> Nonce {
        self.nonce_p
    }

    pub fn verify(&mut self, pa: &PreAttestation) -> Result<(), PreAttestationRejection> {
        self.verified = None;
        client_verify_preattestation(pa, &self.nonce_p, &self.policy, &self.store)?;
        self.verified = Some(pa.clone());
        Ok(())
    }

    pub fn seal_source(&self, archive: &[u8]) -> Result<SealedSource, ConfidentialError> {
        let pa = self
            .verified
            .as_ref()
            .ok_or(ConfidentialError::PreAttestationNotVerified)?;
        seal_to(&pa.channel_public_key, &self.nonce_p, archive)
    }
}

// ---------------------------------------------------------------------------
// Source archive carried inside the sealed payload

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveFile {
    path: String,
    content_b64: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourcePayload {
    build_nonce: Nonce,
    files: Vec<ArchiveFile>,
}

/// Pack every regular file under `dir` (skipping `.git`).
pub fn pack_source_dir(dir: &Path) -> io::Result<Vec<(String, Vec<u8>)>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) -> io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            if entry.file_name() == ".git" {
                continue;
            }
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if path.is_file() {
                let rel = path.strip_prefix(root).expect("walk stays under root");
                let name = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                out.push((name, fs::read(&path)?));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    Ok(files)
}

fn encode_payload(build_nonce: Nonce, files: &[(String, Vec<u8>)]) -> Vec<u8> {
    let payload = SourcePayload {
        build_nonce,
        files: files
            .iter()
            .map(|(p, c)| ArchiveFile {
                path: p.clone(),
                content_b64: B64.encode(c),
            })
            .collect(),
    };
    serde_json::to_vec(&payload).expect("payload serializes")
}

fn unpack_payload(bytes: &[u8], into: &Path) -> Result<Nonce, ConfidentialError> {
    let payload: SourcePayload =
        serde_json::from_slice(bytes).map_err(|e| ConfidentialError::Malformed(e.to_string()))?;
    for file in payload.files {
        let rel = PathBuf::from(&file.path);
        if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(ConfidentialError::Malformed(format!(
                "unsafe archive path {:?}",
                file.path
            )));
        }
        let content = B64
            .decode(&file.content_b64)
            .map_err(|e| ConfidentialError::Malformed(e.to_string()))?;
        let path = into.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, content)?;
    }
    Ok(payload.build_nonce)
}

// ---------------------------------------------------------------------------
// Session with an untrusted host in the middle

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    RequesterToHost,
    HostToCvm,
    CvmToHost,
    HostToRequester,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Observation {
    pub direction: Direction,
    pub bytes: usize,
    /// The host cannot read the payload.
    pub opaque: bool,
}

/// How the host behaves. Everything except `Honest` is an attack the
/// requester must catch in Stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostBehavior {
    Honest,
    /// Boots a CVM whose orchestrator component was modified.
    WrongMeasurement,
    /// Answers with a pre-attestation from a CVM launched for another nonce.
    ReplayedCvm,
    /// Swaps the CVM's channel key for one the host controls.
    SubstitutedChannelKey,
    /// Runs the CVM on a platform certified by a root the requester does not trust.
    UnknownRoot,
}

impl HostBehavior {
    pub const TAMPER_SCENARIOS: [(&'static str, HostBehavior); 4] = [
        ("wrong-measurement", HostBehavior::WrongMeasurement),
        ("replayed-cvm", HostBehavior::ReplayedCvm),
        ("substituted-channel-key", HostBehavior::SubstitutedChannelKey),
        ("unknown-root", HostBehavior::UnknownRoot),
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        Self::TAMPER_SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, b)| *b)
    }
}

/// Relay that records everything it forwards.
#[derive(Debug, Default)]
pub struct HostRelay {
    observed: Vec<Observation>,
    raw: Vec<Vec<u8>>,
}

impl HostRelay {
    fn relay(&mut self, direction: Direction, bytes: Vec<u8>, opaque: bool) -> Vec<u8> {
        self.observed.push(Observation {
            direction,
            bytes: bytes.len(),
            opaque,
        });
        self.raw.push(bytes.clone());
        bytes
    }

    /// Every byte string the host saw, in order.
    pub fn raw_messages(&self) -> &[Vec<u8>] {
        &self.raw
    }

    /// Total length of non-opaque messages that contain any packed source
    /// file's content.
    pub fn plaintext_source_bytes(&self, files: &[(String, Vec<u8>)]) -> usize {
        self.raw
            .iter()
            .filter(|msg| files.iter().any(|(_, c)| !c.is_empty() && contains(msg, c)))
            .map(Vec::len)
            .sum()
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionTranscript {
    pub pre_attestation: PreAttestation,
    pub build_report: Option<AttestationReport>,
    pub host_observed: Vec<Observation>,
    pub plaintext_source_bytes_seen_by_host: usize,
}

impl SessionTranscript {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "pre_attestation": {
                "nonce_p_hex": self.pre_attestation.nonce_p.to_hex(),
                "channel_public_key_hex": hex::encode(self.pre_attestation.channel_public_key),
                "measurement_hex": self.pre_attestation.report.measurement.to_hex(),
                "host_data_hex": self.pre_attestation.report.host_data.to_hex(),
                "report_b64": B64.encode(self.pre_attestation.report.encode()),
            },
            "build_report_b64": self.build_report.as_ref().map(|r| B64.encode(r.encode())),
            "build_measurement_hex": self.build_report.as_ref().map(|r| r.measurement.to_hex()),
            "host_observed": self.host_observed,
            "plaintext_source_bytes_seen_by_host": self.plaintext_source_bytes_seen_by_host,
        })
    }
}

pub struct SessionOutcome {
    pub transcript: SessionTranscript,
    pub bundle: EvidenceBundle,
    pub build_nonce: Nonce,
    pub host: HostRelay,
}

/// Inputs for one confidential session.
pub struct SessionConfig<'a> {
    /// Genuine platform the honest host runs CVMs on.
    pub platform: &'a SimulatedPlatform,
    pub boot: &'a [BootComponent],
    pub source_dir: &'a Path,
    /// Requester policy; the nonce fields are ignored.
    pub policy: VerificationPolicy,
    pub store: TrustStore,
    pub host: HostBehavior,
    pub clock: Box<dyn Clock + 'a>,
}

impl<'a> SessionConfig<'a> {
    pub fn new(
        platform: &'a SimulatedPlatform,
        boot: &'a [BootComponent],
        source_dir: &'a Path,
        policy: VerificationPolicy,
        store: TrustStore,
    ) -> Self {
        SessionConfig {
            platform,
            boot,
            source_dir,
            policy,
            store,
            host: HostBehavior::Honest,
            clock: Box::new(SystemClock),
        }
    }
}

/// Run Stages 1 to 3 with the host relaying every message.
pub fn confidential_build_session(cfg: SessionConfig<'_>) -> Result<SessionOutcome, ConfidentialError> {
    let files = pack_source_dir(cfg.source_dir)?;
    let mut requester = Requester::new(cfg.policy.clone(), cfg.store.clone());
    let mut host = HostRelay::default();

    // Stage 1.
    let launch = host.relay(Direction::RequesterToHost, requester.nonce_p().0.to_vec(), false);
    let nonce_p = Nonce::from_slice(&launch).ok_or_else(|| ConfidentialError::Malformed("launch nonce".into()))?;

    let rogue_platform;
    let tampered_boot;
    let (platform, boot) = match cfg.host {
        HostBehavior::UnknownRoot => {
            let keys = crate::attestation::platform_keygen(
                None,
                cfg.platform.platform_id(),
                cfg.platform.chain().firmware_version,
            );
            rogue_platform = keys.into_platform();
            (&rogue_platform, cfg.boot)
        }
        HostBehavior::WrongMeasurement => {
            tampered_boot = {
                let mut b = cfg.boot.to_vec();
                if let Some(k) = b.iter_mut().find(|c| c.kind == crate::attestation::BootKind::Kettle) {
                    k.content.extend_from_slice(b" (modified by host)");
                }
                b
            };
            (cfg.platform, tampered_boot.as_slice())
        }
        _ => (cfg.platform, cfg.boot),
    };
    let launched_for = match cfg.host {
        HostBehavior::ReplayedCvm => client_begin(),
        _ => nonce_p,
    };
    host.relay(Direction::HostToCvm, launched_for.0.to_vec(), false);
    let cvm = cvm_preattest(platform, boot, launched_for)?;

    let mut pa_wire = host.relay(Direction::CvmToHost, cvm.pre_attestation().to_json(), false);
    if cfg.host == HostBehavior::SubstitutedChannelKey {
        let mut forged = PreAttestation::from_json(&pa_wire)?;
        forged.channel_public_key = PublicKey::from(&StaticSecret::random_from_rng(rand::rngs::OsRng)).to_bytes();
        pa_wire = forged.to_json();
    }
    if cfg.host == HostBehavior::ReplayedCvm {
        // The replayed answer claims the requester's nonce; only host_data betrays it.
        let mut stale = PreAttestation::from_json(&pa_wire)?;
        stale.nonce_p = nonce_p;
        pa_wire = stale.to_json();
    }
    let pa_wire = host.relay(Direction::HostToRequester, pa_wire, false);
    let pa = PreAttestation::from_json(&pa_wire)?;

    // Stage 2.
    if let Err(reason) = requester.verify(&pa) {
        let transcript = SessionTranscript {
            pre_attestation: pa,
            build_report: None,
            plaintext_source_bytes_seen_by_host: host.plaintext_source_bytes(&files),
            host_observed: host.observed,
        };
        return Err(ConfidentialError::AbortedBeforeDisclosure {
            reason,
            transcript: Box::new(transcript),
        });
    }

    // Stage 3.
    let build_nonce = Nonce::random();
    let sealed = requester.seal_source(&encode_payload(build_nonce, &files))?;
    let sealed_wire = host.relay(Direction::RequesterToHost, sealed.to_json(), true);
    let sealed_wire = host.relay(Direction::HostToCvm, sealed_wire, true);

    let bundle = {
        let sealed = SealedSource::from_json(&sealed_wire)?;
        let plaintext = cvm.unseal(&sealed)?;
        let private_dir = tempfile::Builder::new().prefix("kettle-cvm-").tempdir()?;
        let build_nonce = unpack_payload(&plaintext, private_dir.path())?;
        let lock_bytes = fs::read(private_dir.path().join(LOCK_FILE))?;
        let lock = parse_lock_manifest(&lock_bytes).map_err(|e| ConfidentialError::Malformed(e.to_string()))?;
        let request = BuildRequest {
            source: lock.source.clone(),
            nonce: build_nonce,
            config_path: private_dir.path().join(CONFIG_FILE),
        };
        Orchestrator::new(platform, boot.to_vec())
            .with_clock(ClockRef(cfg.clock.as_ref()))
            .run_in_cvm(cvm.cvm(), &request, &lock, private_dir.path())?
    };

    let bundle_bytes: usize = bundle.provenance_bytes.len()
        + bundle.evidence().to_json().len()
        + bundle.artifacts.iter().map(|a| a.bytes.len()).sum::<usize>();
    for direction in [Direction::CvmToHost, Direction::HostToRequester] {
        host.observed.push(Observation {
            direction,
            bytes: bundle_bytes,
            opaque: false,
        });
    }

    let transcript = SessionTranscript {
        pre_attestation: pa,
        build_report: Some(bundle.report.clone()),
        plaintext_source_bytes_seen_by_host: host.plaintext_source_bytes(&files),
        host_observed: host.observed.clone(),
    };
    Ok(SessionOutcome {
        transcript,
        bundle,
        build_nonce,
        host,
    })
}

struct ClockRef<'c>(&'c dyn Clock);

impl Clock for ClockRef<'_> {
    fn now(&self) -> crate::provenance::Timestamp {
        self.0.now()
    }
}
