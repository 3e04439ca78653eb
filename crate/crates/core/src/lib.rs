//! Attested-build evidence chain.
//!
//! The crate covers every link between declared build inputs and a verified
//! artifact:
//!
//! - [`manifest`]: pinned lock manifest, input digest checks, canonical leaf order
//! - [`merkle`]: length-prefixed SHA-256 Merkle tree with inclusion proofs
//! - [`provenance`]: in-toto Statement with a SLSA v1 predicate, canonical bytes
//! - [`attestation`]: simulated TEE platform (measured boot, signed reports)
//! - [`orchestrator`]: the end-to-end attested build and the bundle on disk
//! - [`verifier`]: bundle verification against a measurement allow-list
//! - [`confidential`]: pre-attested confidential source delivery
//!
//! The TEE is simulated in software. Reports are signed with Ed25519 keys that
//! chain to a locally generated root, standing in for the vendor root of trust.

pub mod attestation;
pub mod canonical;
pub mod confidential;
pub mod digest;
pub mod manifest;
pub mod merkle;
pub mod orchestrator;
pub mod provenance;
pub mod sample;
pub mod verifier;

pub use digest::{Digest32, Digest48, Nonce};

/// Release identifier recorded in provenance and allow-list entries.
pub const KETTLE_VERSION: &str = env!("CARGO_PKG_VERSION");
