//! Software stand-in for a TEE attestation platform.
//!
//! Measured boot folds each component into a SHA-384 register. The platform
//! signs fixed-layout reports with an Ed25519 key whose certificate chains to
//! a root key held in a [`TrustStore`].
//!
//! Report layout (219 bytes, integers big-endian):
//!
//! | offset | len | field            |
//! |--------|-----|------------------|
//! | 0      | 4   | magic `KTLR`     |
//! | 4      | 2   | version (1)      |
//! | 6      | 1   | platform_id      |
//! | 7      | 4   | firmware_version |
//! | 11     | 48  | measurement      |
//! | 59     | 32  | host_data        |
//! | 91     | 64  | report_data      |
//! | 155    | 64  | signature        |

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha384};

use crate::digest::{decode_hex_array, sha256, Digest32, Digest48};

pub const REPORT_MAGIC: [u8; 4] = *b"KTLR";
pub const REPORT_VERSION: u16 = 1;
pub const REPORT_LEN: usize = 219;
const SIGNED_LEN: usize = REPORT_LEN - 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum PlatformId {
    Sim = 0,
    SevSnp = 1,
    Tdx = 2,
}

impl PlatformId {
    pub fn as_str(self) -> &'static str {
        match self {
            PlatformId::Sim => "sim",
            PlatformId::SevSnp => "sev-snp",
            PlatformId::Tdx => "tdx",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sim" | "0" => Some(PlatformId::Sim),
            "sev-snp" | "1" => Some(PlatformId::SevSnp),
            "tdx" | "2" => Some(PlatformId::Tdx),
            _ => None,
        }
    }
}

impl TryFrom<u8> for PlatformId {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(PlatformId::Sim),
            1 => Ok(PlatformId::SevSnp),
            2 => Ok(PlatformId::Tdx),
            other => Err(format!("unknown platform id {other}")),
        }
    }
}

impl From<PlatformId> for u8 {
    fn from(p: PlatformId) -> u8 {
        p as u8
    }
}

impl fmt::Display for PlatformId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// ---------------------------------------------------------------------------
// Measured boot

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootKind {
    Firmware = 0,
    Kernel = 1,
    Cmdline = 2,
    Initrd = 3,
    VmImage = 4,
    Kettle = 5,
}

impl BootKind {
    /// Load order.
    pub const ALL: [BootKind; 6] = [
        BootKind::Firmware,
        BootKind::Kernel,
        BootKind::Cmdline,
        BootKind::Initrd,
        BootKind::VmImage,
        BootKind::Kettle,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootComponent {
    pub kind: BootKind,
    pub content: Vec<u8>,
}

impl BootComponent {
    pub fn new(kind: BootKind, content: impl Into<Vec<u8>>) -> Self {
        BootComponent {
            kind,
            content: content.into(),
        }
    }

    pub fn digest(&self) -> Digest48 {
        let mut h = Sha384::new();
        h.update([self.kind.tag()]);
        h.update(&self.content);
        Digest48(h.finalize().into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasurementRegister(pub Digest48);

impl Default for MeasurementRegister {
    fn default() -> Self {
        MeasurementRegister(Digest48::zero())
    }
}

impl MeasurementRegister {
    pub fn value(&self) -> Digest48 {
        self.0
    }
}

/// `new = SHA-384(old || SHA-384(kind_tag || content))`.
pub fn extend(register: MeasurementRegister, component: &BootComponent) -> MeasurementRegister {
    let mut h = Sha384::new();
    h.update(register.0 .0);
    h.update(component.digest().0);
    MeasurementRegister(Digest48(h.finalize().into()))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BootError {
    #[error("boot component {found:?} loaded where {expected:?} was expected")]
    WrongOrder { expected: BootKind, found: BootKind },
    #[error("boot chain is missing the {0:?} component")]
    MissingComponent(BootKind),
}

pub fn measure_boot_chain(components: &[BootComponent]) -> Result<Digest48, BootError> {
    if let Some(missing) = BootKind::ALL.iter().find(|k| !components.iter().any(|c| c.kind == **k)) {
        return Err(BootError::MissingComponent(*missing));
    }
    for (i, comp) in components.iter().enumerate() {
        let expected = BootKind::ALL.get(i).copied().unwrap_or(BootKind::Kettle);
        if comp.kind != expected || i >= BootKind::ALL.len() {
            return Err(BootError::WrongOrder {
                expected,
                found: comp.kind,
            });
        }
    }
    Ok(components.iter().fold(MeasurementRegister::default(), extend).value())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBootComponent {
    kind: BootKind,
    content_b64: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBootFixture {
    components: Vec<RawBootComponent>,
}

/// Parse a boot fixture file: `{"components": [{"kind", "content_b64"}]}`.
pub fn parse_boot_fixture(bytes: &[u8]) -> Result<Vec<BootComponent>, String> {
    let raw: RawBootFixture = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    raw.components
        .into_iter()
        .map(|c| {
            let content = B64.decode(&c.content_b64).map_err(|e| format!("{:?}: {e}", c.kind))?;
            Ok(BootComponent { kind: c.kind, content })
        })
        .collect()
}

pub fn boot_fixture_to_json(components: &[BootComponent]) -> Vec<u8> {
    let raw = RawBootFixture {
        components: components
            .iter()
            .map(|c| RawBootComponent {
                kind: c.kind,
                content_b64: B64.encode(&c.content),
            })
            .collect(),
    };
    serde_json::to_vec_pretty(&raw).expect("boot fixture serializes")
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationReport {
    pub version: u16,
    pub platform_id: PlatformId,
    pub firmware_version: u32,
    pub measurement: Digest48,
    pub host_data: Digest32,
    pub report_data: [u8; 64],
    pub signature: [u8; 64],
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("report must be {REPORT_LEN} bytes, got {0}")]
    BadLength(usize),
    #[error("bad report magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported report version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown platform id {0}")]
    UnknownPlatform(u8),
}

impl AttestationReport {
    fn signed_bytes(&self) -> [u8; SIGNED_LEN] {
        let mut out = [0u8; SIGNED_LEN];
        out[0..4].copy_from_slice(&REPORT_MAGIC);
        out[4..6].copy_from_slice(&self.version.to_be_bytes());
        out[6] = self.platform_id.into();
        out[7..11].copy_from_slice(&self.firmware_version.to_be_bytes());
        out[11..59].copy_from_slice(&self.measurement.0);
        out[59..91].copy_from_slice(&self.host_data.0);
        out[91..155].copy_from_slice(&self.report_data);
        out
    }

    pub fn encode(&self) -> [u8; REPORT_LEN] {
        let mut out = [0u8; REPORT_LEN];
        out[..SIGNED_LEN].copy_from_slice(&self.signed_bytes());
        out[SIGNED_LEN..].copy_from_slice(&self.signature);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.len() != REPORT_LEN {
            return Err(DecodeError::BadLength(bytes.len()));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != REPORT_MAGIC {
            return Err(DecodeError::BadMagic(magic));
        }
        let version = u16::from_be_bytes([bytes[4], bytes[5]]);
        if version != REPORT_VERSION {
            return Err(DecodeError::UnsupportedVersion(version));
        }
        let platform_id = PlatformId::try_from(bytes[6]).map_err(|_| DecodeError::UnknownPlatform(bytes[6]))?;
        Ok(AttestationReport {
            version,
            platform_id,
            firmware_version: u32::from_be_bytes(bytes[7..11].try_into().unwrap()),
            measurement: Digest48::from_slice(&bytes[11..59]).unwrap(),
            host_data: Digest32::from_slice(&bytes[59..91]).unwrap(),
            report_data: bytes[91..155].try_into().unwrap(),
            signature: bytes[155..219].try_into().unwrap(),
        })
    }

    /// Leading half of report_data.
    pub fn report_data_digest(&self) -> Digest32 {
        Digest32::from_slice(&self.report_data[..32]).unwrap()
    }

    /// Trailing half of report_data.
    pub fn report_data_tail(&self) -> [u8; 32] {
        self.report_data[32..].try_into().unwrap()
    }
}

pub fn encode_report(report: &AttestationReport) -> [u8; REPORT_LEN] {
    report.encode()
}

pub fn decode_report(bytes: &[u8]) -> Result<AttestationReport, DecodeError> {
    AttestationReport::decode(bytes)
}

// ---------------------------------------------------------------------------
// Keys and certificate chain

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlatformCertChain {
    pub platform_public_key: [u8; 32],
    pub platform_id: PlatformId,
    pub firmware_version: u32,
    pub root_signature: [u8; 64],
    pub root_key_id: Digest32,
}

impl PlatformCertChain {
    fn signed_bytes(platform_public_key: &[u8; 32], platform_id: PlatformId, firmware_version: u32) -> [u8; 37] {
        let mut out = [0u8; 37];
        out[..32].copy_from_slice(platform_public_key);
        out[32] = platform_id.into();
        out[33..].copy_from_slice(&firmware_version.to_be_bytes());
        out
    }

    pub fn issue(
        root: &SigningKey,
        platform_public_key: [u8; 32],
        platform_id: PlatformId,
        firmware_version: u32,
    ) -> Self {
        let msg = Self::signed_bytes(&platform_public_key, platform_id, firmware_version);
        PlatformCertChain {
            platform_public_key,
            platform_id,
            firmware_version,
            root_signature: root.sign(&msg).to_bytes(),
            root_key_id: root_key_id(&root.verifying_key()),
        }
    }
}

pub fn root_key_id(key: &VerifyingKey) -> Digest32 {
    sha256(key.as_bytes())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustStore {
    roots: BTreeMap<Digest32, VerifyingKey>,
}

impl TrustStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_root(key: VerifyingKey) -> Self {
        let mut s = Self::new();
        s.add_root(key);
        s
    }

    pub fn add_root(&mut self, key: VerifyingKey) -> Digest32 {
        let id = root_key_id(&key);
        self.roots.insert(id, key);
        id
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn get(&self, id: &Digest32) -> Option<&VerifyingKey> {
        self.roots.get(id)
    }

    /// Trust store file: JSON object mapping `root_key_id_hex` to
    /// `root_public_key_hex`. The id must match the key it names.
    pub fn from_json(bytes: &[u8]) -> Result<Self, String> {
        let raw: BTreeMap<String, String> = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        let mut store = TrustStore::new();
        for (id_hex, key_hex) in raw {
            let id = Digest32::from_hex(&id_hex).map_err(|e| format!("root key id: {e}"))?;
            let key_bytes = decode_hex_array::<32>(&key_hex).map_err(|e| format!("root key: {e}"))?;
            let key = VerifyingKey::from_bytes(&key_bytes).map_err(|e| format!("root key: {e}"))?;
            if root_key_id(&key) != id {
                return Err(format!("root key id {id_hex} does not match its key"));
            }
            store.roots.insert(id, key);
        }
        if store.is_empty() {
            return Err("trust store is empty".into());
        }
        Ok(store)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let raw: BTreeMap<String, String> = self
            .roots
            .iter()
            .map(|(id, k)| (id.to_hex(), hex::encode(k.as_bytes())))
            .collect();
        serde_json::to_vec_pretty(&raw).expect("trust store serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ReportRejection {
    #[error("trust store is empty")]
    EmptyTrustStore,
    #[error("certificate chain names a root that is not trusted")]
    UnknownRoot,
    #[error("root signature over the platform certificate is invalid")]
    BadRootSignature,
    #[error("report signature is invalid")]
    BadReportSignature,
    #[error("report platform or firmware does not match the certificate chain")]
    ChainMismatch,
    #[error("report bytes do not decode")]
    Malformed,
}

pub fn verify_chain(chain: &PlatformCertChain, store: &TrustStore) -> Result<(), ReportRejection> {
    if store.is_empty() {
        return Err(ReportRejection::EmptyTrustStore);
    }
    let root = store.get(&chain.root_key_id).ok_or(ReportRejection::UnknownRoot)?;
    let msg = PlatformCertChain::signed_bytes(&chain.platform_public_key, chain.platform_id, chain.firmware_version);
    root.verify_strict(&msg, &Signature::from_bytes(&chain.root_signature))
        .map_err(|_| ReportRejection::BadRootSignature)
}

/// Check a report against its certificate chain and the trusted roots.
pub fn verify_report(
    report: &AttestationReport,
    chain: &PlatformCertChain,
    store: &TrustStore,
) -> Result<(), ReportRejection> {
    verify_chain(chain, store)?;
    if report.platform_id != chain.platform_id || report.firmware_version != chain.firmware_version {
        return Err(ReportRejection::ChainMismatch);
    }
    let key = VerifyingKey::from_bytes(&chain.platform_public_key).map_err(|_| ReportRejection::BadReportSignature)?;
    key.verify_strict(&report.signed_bytes(), &Signature::from_bytes(&report.signature))
        .map_err(|_| ReportRejection::BadReportSignature)
}

pub fn verify_encoded_report(
    bytes: &[u8],
    chain: &PlatformCertChain,
    store: &TrustStore,
) -> Result<AttestationReport, ReportRejection> {
    let report = AttestationReport::decode(bytes).map_err(|_| ReportRejection::Malformed)?;
    verify_report(&report, chain, store)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Simulated platform

/// Key material for one simulated platform and the root that certifies it.
pub struct PlatformKeys {
    pub root: SigningKey,
    pub platform: SigningKey,
    pub chain: PlatformCertChain,
}

fn derive_key(label: &[u8], seed: &[u8; 32]) -> SigningKey {
    let mut material = label.to_vec();
    material.extend_from_slice(seed);
    SigningKey::from_bytes(&sha256(&material).0)
}

/// Generate root and platform keys. With a seed the result is deterministic.
pub fn platform_keygen(seed: Option<[u8; 32]>, platform_id: PlatformId, firmware_version: u32) -> PlatformKeys {
    let (root, platform) = match seed {
        Some(seed) => (
            derive_key(b"kettle-sim-root", &seed),
            derive_key(b"kettle-sim-platform", &seed),
        ),
        None => {
            let mut rng = rand::rngs::OsRng;
            (SigningKey::generate(&mut rng), SigningKey::generate(&mut rng))
        }
    };
    PlatformKeys::from_keys(root, platform, platform_id, firmware_version)
}

impl PlatformKeys {
    pub fn from_keys(root: SigningKey, platform: SigningKey, platform_id: PlatformId, firmware_version: u32) -> Self {
        let chain = PlatformCertChain::issue(
            &root,
            platform.verifying_key().to_bytes(),
            platform_id,
            firmware_version,
        );
        PlatformKeys { root, platform, chain }
    }

    pub fn trust_store(&self) -> TrustStore {
        TrustStore::with_root(self.root.verifying_key())
    }

    pub fn into_platform(self) -> SimulatedPlatform {
        SimulatedPlatform::new(self.platform, self.chain)
    }

    /// `keys.json`: secrets plus platform identity. Simulation only.
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(&serde_json::json!({
            "root_secret_key_hex": hex::encode(self.root.to_bytes()),
            "platform_secret_key_hex": hex::encode(self.platform.to_bytes()),
            "platform_id": u8::from(self.chain.platform_id),
            "firmware_version": self.chain.firmware_version,
        }))
        .expect("keys serialize")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, String> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            root_secret_key_hex: String,
            platform_secret_key_hex: String,
            platform_id: PlatformId,
            firmware_version: u32,
        }
        let raw: Raw = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        let root = decode_hex_array::<32>(&raw.root_secret_key_hex).map_err(|e| e.to_string())?;
        let platform = decode_hex_array::<32>(&raw.platform_secret_key_hex).map_err(|e| e.to_string())?;
        Ok(Self::from_keys(
            SigningKey::from_bytes(&root),
            SigningKey::from_bytes(&platform),
            raw.platform_id,
            raw.firmware_version,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("{field} must be {expected} bytes, got {actual}")]
pub struct SizeMismatch {
    pub field: &'static str,
    pub expected: usize,
    pub actual: usize,
}

/// The platform's security processor. The signing key never leaves it.
pub struct SimulatedPlatform {
    key: Mutex<SigningKey>,
    chain: PlatformCertChain,
}

impl SimulatedPlatform {
    pub fn new(key: SigningKey, chain: PlatformCertChain) -> Self {
        SimulatedPlatform {
            key: Mutex::new(key),
            chain,
        }
    }

    pub fn chain(&self) -> &PlatformCertChain {
        &self.chain
    }

    pub fn platform_id(&self) -> PlatformId {
        self.chain.platform_id
    }

    pub fn issue(&self, measurement: Digest48, host_data: Digest32, report_data: [u8; 64]) -> AttestationReport {
        let mut report = AttestationReport {
            version: REPORT_VERSION,
            platform_id: self.chain.platform_id,
            firmware_version: self.chain.firmware_version,
            measurement,
            host_data,
            report_data,
            signature: [0u8; 64],
        };
        let key = self.key.lock().unwrap_or_else(|e| e.into_inner());
        report.signature = key.sign(&report.signed_bytes()).to_bytes();
        report
    }

    /// Measure `boot` and start a CVM whose reports carry `host_data`.
    pub fn launch(&self, boot: &[BootComponent], host_data: Digest32) -> Result<LaunchedCvm<'_>, BootError> {
        let measurement = measure_boot_chain(boot)?;
        Ok(LaunchedCvm {
            platform: self,
            measurement,
            host_data,
        })
    }
}

/// Issue a report from exactly-sized raw fields.
pub fn issue_report(
    platform: &SimulatedPlatform,
    measurement: &[u8],
    host_data: &[u8],
    report_data: &[u8],
) -> Result<AttestationReport, SizeMismatch> {
    let size = |field, expected, actual: usize| SizeMismatch {
        field,
        expected,
        actual,
    };
    let m = Digest48::from_slice(measurement).ok_or(size("measurement", 48, measurement.len()))?;
    let h = Digest32::from_slice(host_data).ok_or(size("host_data", 32, host_data.len()))?;
    let r: [u8; 64] = report_data
        .try_into()
        .map_err(|_| size("report_data", 64, report_data.len()))?;
    Ok(platform.issue(m, h, r))
}

/// A booted guest: measurement and host_data are fixed at launch.
pub struct LaunchedCvm<'p> {
    platform: &'p SimulatedPlatform,
    measurement: Digest48,
    host_data: Digest32,
}

impl LaunchedCvm<'_> {
    pub fn measurement(&self) -> Digest48 {
        self.measurement
    }

    pub fn host_data(&self) -> Digest32 {
        self.host_data
    }

    pub fn chain(&self) -> &PlatformCertChain {
        self.platform.chain()
    }

    pub fn platform_id(&self) -> PlatformId {
        self.platform.platform_id()
    }

    pub fn report(&self, report_data: [u8; 64]) -> AttestationReport {
        self.platform.issue(self.measurement, self.host_data, report_data)
    }
}

// ---------------------------------------------------------------------------
// evidence.json

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence {
    pub report: AttestationReport,
    pub chain: PlatformCertChain,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    platform_public_key_hex: String,
    platform_id: PlatformId,
    firmware_version: u32,
    root_signature_hex: String,
    root_key_id_hex: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvidence {
    report_b64: String,
    chain: RawChain,
}

impl Evidence {
    pub fn to_json(&self) -> Vec<u8> {
        let raw = RawEvidence {
            report_b64: B64.encode(self.report.encode()),
            chain: RawChain {
                platform_public_key_hex: hex::encode(self.chain.platform_public_key),
                platform_id: self.chain.platform_id,
                firmware_version: self.chain.firmware_version,
                root_signature_hex: hex::encode(self.chain.root_signature),
                root_key_id_hex: self.chain.root_key_id.to_hex(),
            },
        };
        serde_json::to_vec_pretty(&raw).expect("evidence serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, String> {
        let raw: RawEvidence = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        let report_bytes = B64.decode(&raw.report_b64).map_err(|e| format!("report_b64: {e}"))?;
        let report = AttestationReport::decode(&report_bytes).map_err(|e| e.to_string())?;
        let c = raw.chain;
        let chain = PlatformCertChain {
            platform_public_key: decode_hex_array(&c.platform_public_key_hex).map_err(|e| e.to_string())?,
            platform_id: c.platform_id,
            firmware_version: c.firmware_version,
            root_signature: decode_hex_array(&c.root_signature_hex).map_err(|e| e.to_string())?,
            root_key_id: Digest32::from_hex(&c.root_key_id_hex).map_err(|e| e.to_string())?,
        };
        Ok(Evidence { report, chain })
    }
}
