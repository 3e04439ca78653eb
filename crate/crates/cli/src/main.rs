use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use kettle_core::attestation::{
    boot_fixture_to_json, measure_boot_chain, parse_boot_fixture, platform_keygen, BootComponent, PlatformId,
    PlatformKeys, TrustStore,
};
use kettle_core::confidential::{confidential_build_session, ConfidentialError, HostBehavior, SessionConfig};
use kettle_core::digest::sha256;
use kettle_core::manifest::{enumerate_inputs, parse_lock_manifest, InputError, LockManifest};
use kettle_core::merkle::{build_tree, prove_inclusion, verify_inclusion, InclusionProof};
use kettle_core::orchestrator::{read_bundle, write_bundle, BuildError, BuildRequest, BundleError, Orchestrator};
use kettle_core::provenance::parse_statement;
use kettle_core::sample::{default_boot_fixture, write_sample_project, SAMPLE_OUTPUT};
use kettle_core::verifier::{
    allowlist_to_json, check_allowlist, load_allowlist, verify_bundle, AllowListEntry, VerificationPolicy, Version,
};
use kettle_core::{Digest32, Digest48, Nonce};

#[derive(Parser)]
#[command(name = "kettle", version, about = "Attested builds on a simulated confidential VM")]
struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an attested build and write an evidence bundle.
    Build(BuildArgs),
    /// Verify an evidence bundle offline.
    Verify(VerifyArgs),
    /// Manage the measurement allow-list.
    #[command(subcommand)]
    Allowlist(AllowlistCmd),
    /// Selective disclosure of one committed input.
    #[command(subcommand)]
    Inclusion(InclusionCmd),
    #[command(name = "prove-inclusion", hide = true)]
    ProveInclusion(ProveArgs),
    #[command(name = "verify-inclusion", hide = true)]
    VerifyInclusion(VerifyProofArgs),
    /// Generate simulated root and platform keys.
    Keygen(KeygenArgs),
    /// Print the launch measurement of a boot fixture.
    Measure(MeasureArgs),
    /// Write the sample project, boot fixture and keys into a directory.
    InitSample(InitSampleArgs),
    /// Run a pre-attested confidential build with requester, host and CVM actors.
    ConfidentialDemo(DemoArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    lock: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// 32-byte hex build nonce; random if omitted.
    #[arg(long)]
    nonce: Option<String>,
    /// Boot fixture JSON; the built-in fixture if omitted.
    #[arg(long)]
    boot_fixture: Option<PathBuf>,
    #[arg(long)]
    platform_keys: PathBuf,
    /// Source checkout; defaults to the directory holding the lock file.
    #[arg(long)]
    source: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    allowlist: PathBuf,
    #[arg(long)]
    truststore: PathBuf,
    #[arg(long)]
    expect_repo: String,
    #[arg(long)]
    expect_ref: String,
    #[arg(long)]
    expect_nonce: String,
    #[arg(long)]
    min_version: String,
    #[arg(long, default_value = "sim")]
    platform: String,
}

#[derive(Subcommand)]
enum AllowlistCmd {
    /// Add an entry, creating the file if needed.
    Add(AllowlistAddArgs),
    /// Check a measurement against the allow-list.
    Check(AllowlistCheckArgs),
}

#[derive(Args)]
struct MeasurementSource {
    #[arg(long, conflicts_with = "boot_fixture")]
    measurement: Option<String>,
    #[arg(long)]
    boot_fixture: Option<PathBuf>,
}

#[derive(Args)]
struct AllowlistAddArgs {
    #[arg(long)]
    allowlist: PathBuf,
    #[command(flatten)]
    source: MeasurementSource,
    #[arg(long, default_value = kettle_core::KETTLE_VERSION)]
    kettle_version: String,
    #[arg(long, default_value = "sim")]
    platform: String,
    #[arg(long, default_value_t = 0)]
    min_firmware: u32,
}

#[derive(Args)]
struct AllowlistCheckArgs {
    #[arg(long)]
    allowlist: PathBuf,
    #[command(flatten)]
    source: MeasurementSource,
    #[arg(long)]
    firmware: u32,
    #[arg(long, default_value = "0.0.0")]
    min_version: String,
    #[arg(long, default_value = "sim")]
    platform: String,
}

#[derive(Subcommand)]
enum InclusionCmd {
    Prove(ProveArgs),
    Verify(VerifyProofArgs),
}

#[derive(Args)]
struct ProveArgs {
    #[arg(long)]
    lock: PathBuf,
    /// Leaf label, e.g. `serde@1.0.228` or `lockfile`.
    #[arg(long, required_unless_present = "index", conflicts_with = "index")]
    label: Option<String>,
    #[arg(long)]
    index: Option<usize>,
    /// Write the proof here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyProofArgs {
    #[arg(long)]
    proof: PathBuf,
    /// Published input Merkle root (hex).
    #[arg(long, required_unless_present = "provenance", conflicts_with = "provenance")]
    root: Option<String>,
    /// Take the root from a provenance document.
    #[arg(long)]
    provenance: Option<PathBuf>,
}

#[derive(Args)]
struct KeygenArgs {
    /// 32-byte hex seed for reproducible keys; random if omitted.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Also write a trust store holding the root key.
    #[arg(long)]
    truststore: Option<PathBuf>,
    #[arg(long, default_value = "sim")]
    platform_id: String,
    #[arg(long, default_value_t = 1)]
    firmware: u32,
}

#[derive(Args)]
struct MeasureArgs {
    #[arg(long)]
    boot_fixture: Option<PathBuf>,
}

#[derive(Args)]
struct InitSampleArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    seed: Option<String>,
}

#[derive(Args)]
struct DemoArgs {
    /// Host attack to simulate; the requester must refuse to send source.
    #[arg(long, value_parser = ["wrong-measurement", "replayed-cvm", "substituted-channel-key", "unknown-root"])]
    tamper: Option<String>,
}

/// Bad flags, unreadable or malformed input files. Exit code 2.
#[derive(Debug)]
struct Malformed(String);

impl fmt::Display for Malformed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Malformed {}

fn malformed(msg: impl fmt::Display) -> anyhow::Error {
    anyhow!(Malformed(msg.to_string()))
}

struct Outcome {
    ok: bool,
    json: Value,
    text: String,
}

impl Outcome {
    fn pass(json: Value, text: impl Into<String>) -> Self {
        Outcome {
            ok: true,
            json,
            text: text.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() && std::env::args().any(|a| a == "--json") => {
            println!(
                "{}",
                json!({ "ok": false, "error": e.render().to_string().trim_end(), "exit_code": 2 })
            );
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    let json = cli.json;
    match run(cli.command) {
        Ok(out) => {
            if json {
                println!("{}", out.json);
            } else if !out.text.is_empty() {
                println!("{}", out.text.trim_end());
            }
            ExitCode::from(if out.ok { 0 } else { 1 })
        }
        Err(err) => {
            let code = if err.downcast_ref::<Malformed>().is_some() {
                2
            } else {
                1
            };
            if json {
                println!(
                    "{}",
                    json!({ "ok": false, "error": format!("{err:#}"), "exit_code": code })
                );
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Build(a) => cmd_build(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Allowlist(AllowlistCmd::Add(a)) => cmd_allowlist_add(a),
        Command::Allowlist(AllowlistCmd::Check(a)) => cmd_allowlist_check(a),
        Command::Inclusion(InclusionCmd::Prove(a)) | Command::ProveInclusion(a) => cmd_prove(a),
        Command::Inclusion(InclusionCmd::Verify(a)) | Command::VerifyInclusion(a) => cmd_verify_proof(a),
        Command::Keygen(a) => cmd_keygen(a),
        Command::Measure(a) => cmd_measure(a),
        Command::InitSample(a) => cmd_init_sample(a),
        Command::ConfidentialDemo(a) => cmd_demo(a),
    }
}

// ---------------------------------------------------------------------------
// input helpers

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| malformed(format!("{}: {e}", path.display())))
}

fn parse_platform(s: &str) -> Result<PlatformId> {
    PlatformId::parse(s).ok_or_else(|| malformed(format!("unknown platform {s:?} (expected sim, sev-snp or tdx)")))
}

fn parse_version(s: &str) -> Result<Version> {
    s.parse().map_err(|e| malformed(format!("version {s:?}: {e}")))
}

fn parse_seed(s: &str) -> Result<[u8; 32]> {
    Nonce::from_hex(s)
        .map(|n| n.0)
        .map_err(|e| malformed(format!("--seed: {e}")))
}

fn load_lock(path: &Path) -> Result<LockManifest> {
    parse_lock_manifest(&read(path)?).map_err(|e| malformed(format!("{}: {e}", path.display())))
}

fn load_boot(path: Option<&Path>) -> Result<Vec<BootComponent>> {
    match path {
        None => Ok(default_boot_fixture()),
        Some(p) => parse_boot_fixture(&read(p)?).map_err(|e| malformed(format!("{}: {e}", p.display()))),
    }
}

fn measurement_of(src: &MeasurementSource) -> Result<Digest48> {
    match (&src.measurement, &src.boot_fixture) {
        (Some(hex), _) => Digest48::from_hex(hex).map_err(|e| malformed(format!("--measurement: {e}"))),
        (None, Some(p)) => measure_boot_chain(&load_boot(Some(p))?).map_err(malformed),
        (None, None) => Err(malformed("one of --measurement or --boot-fixture is required")),
    }
}

fn load_allowlist_file(path: &Path) -> Result<Vec<AllowListEntry>> {
    load_allowlist(&read(path)?).map_err(|e| malformed(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------------------
// commands

fn cmd_build(a: BuildArgs) -> Result<Outcome> {
    let lock = load_lock(&a.lock)?;
    let keys = PlatformKeys::from_json(&read(&a.platform_keys)?)
        .map_err(|e| malformed(format!("{}: {e}", a.platform_keys.display())))?;
    let boot = load_boot(a.boot_fixture.as_deref())?;
    let nonce = match &a.nonce {
        Some(hex) => Nonce::from_hex(hex).map_err(|e| malformed(format!("--nonce: {e}")))?,
        None => Nonce::random(),
    };
    let source_dir = match &a.source {
        Some(dir) => dir.clone(),
        None => match a.lock.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        },
    };
    let request = BuildRequest {
        source: lock.source.clone(),
        nonce,
        config_path: a.config.clone(),
    };
    let platform = keys.into_platform();

    let bundle = match Orchestrator::new(&platform, boot)
        .exclude_path(&a.out)
        .run_attested_build(&request, &lock, &source_dir)
    {
        Ok(b) => b,
        Err(BuildError::Config(msg)) => return Err(malformed(format!("{}: {msg}", a.config.display()))),
        Err(BuildError::Boot(e)) => return Err(malformed(format!("boot fixture: {e}"))),
        Err(BuildError::Input(InputError::InputMismatch { name, expected, actual })) => {
            return Err(anyhow!(
                "dependency {name} does not match its pinned digest: expected {expected}, got {actual}"
            ))
        }
        Err(BuildError::Input(InputError::MissingBlob { name })) => {
            return Err(anyhow!("dependency {name}: blob not found"))
        }
        Err(e) => return Err(e.into()),
    };
    write_bundle(&bundle, &a.out).with_context(|| format!("writing bundle to {}", a.out.display()))?;

    let statement = parse_statement(&bundle.provenance_bytes)?;
    let subjects: Vec<Value> = bundle
        .artifacts
        .iter()
        .map(|art| json!({ "name": art.name, "sha256": art.sha256().to_hex() }))
        .collect();
    let mut text = String::new();
    for art in &bundle.artifacts {
        text.push_str(&format!("subject      {}  {}\n", art.sha256(), art.name));
    }
    text.push_str(&format!("measurement  {}\n", bundle.report.measurement));
    text.push_str(&format!("merkle root  {}\n", statement.input_merkle_root()));
    text.push_str(&format!("nonce        {}\n", nonce));
    text.push_str(&format!("bundle       {}\n", a.out.display()));
    Ok(Outcome::pass(
        json!({
            "ok": true,
            "bundle": a.out.display().to_string(),
            "subjects": subjects,
            "measurement_hex": bundle.report.measurement.to_hex(),
            "input_merkle_root_hex": statement.input_merkle_root().to_hex(),
            "provenance_sha256_hex": sha256(&bundle.provenance_bytes).to_hex(),
            "build_nonce_hex": nonce.to_hex(),
        }),
        text,
    ))
}

fn cmd_verify(a: VerifyArgs) -> Result<Outcome> {
    let bundle = match read_bundle(&a.bundle) {
        Ok(b) => b,
        Err(e @ (BundleError::MissingFile(_) | BundleError::CorruptBundle(_))) => return Err(malformed(e)),
        Err(e) => return Err(e.into()),
    };
    let store = TrustStore::from_json(&read(&a.truststore)?)
        .map_err(|e| malformed(format!("{}: {e}", a.truststore.display())))?;
    let policy = VerificationPolicy {
        allowlist: load_allowlist_file(&a.allowlist)?,
        min_version: parse_version(&a.min_version)?,
        required_platform: parse_platform(&a.platform)?,
        expected_repository: a.expect_repo,
        expected_ref: a.expect_ref,
        expected_nonce: Nonce::from_hex(&a.expect_nonce).map_err(|e| malformed(format!("--expect-nonce: {e}")))?,
    };
    let outcome = match verify_bundle(&bundle, &policy, &store) {
        Ok(o) => o,
        Err(e) => return Err(malformed(e)),
    };

    let mut text = String::new();
    for r in &outcome.step_results {
        let status = match (r.evaluated, r.passed) {
            (false, _) => "SKIP",
            (true, true) => "PASS",
            (true, false) => "FAIL",
        };
        text.push_str(&format!("{status}  {:<12} {}\n", r.step.to_string(), r.reason));
    }
    text.push_str(if outcome.passed {
        "verification passed\n"
    } else {
        "verification FAILED\n"
    });
    Ok(Outcome {
        ok: outcome.passed,
        json: serde_json::to_value(&outcome)?,
        text,
    })
}

fn cmd_allowlist_add(a: AllowlistAddArgs) -> Result<Outcome> {
    let mut entries = if a.allowlist.exists() {
        load_allowlist_file(&a.allowlist)?
    } else {
        Vec::new()
    };
    let entry = AllowListEntry {
        measurement: measurement_of(&a.source)?,
        kettle_version: parse_version(&a.kettle_version)?,
        platform_id: parse_platform(&a.platform)?,
        min_firmware: a.min_firmware,
    };
    let replaced = entries
        .iter_mut()
        .find(|e| e.measurement == entry.measurement && e.platform_id == entry.platform_id)
        .map(|e| *e = entry.clone())
        .is_some();
    if !replaced {
        entries.push(entry.clone());
    }
    write(&a.allowlist, &allowlist_to_json(&entries))?;
    Ok(Outcome::pass(
        json!({ "ok": true, "entry": entry, "replaced": replaced, "entries": entries.len() }),
        format!(
            "{} {} ({} entries)",
            if replaced { "updated" } else { "added" },
            entry.measurement,
            entries.len()
        ),
    ))
}

fn cmd_allowlist_check(a: AllowlistCheckArgs) -> Result<Outcome> {
    let measurement = measurement_of(&a.source)?;
    let policy = VerificationPolicy {
        allowlist: load_allowlist_file(&a.allowlist)?,
        min_version: parse_version(&a.min_version)?,
        required_platform: parse_platform(&a.platform)?,
        expected_repository: String::new(),
        expected_ref: String::new(),
        expected_nonce: Nonce::zero(),
    };
    let matched = check_allowlist(&measurement, a.firmware, &policy).cloned();
    let text = match &matched {
        Some(e) => format!(
            "allowed: {} (kettle {}, {})",
            measurement, e.kettle_version, e.platform_id
        ),
        None => format!("not allowed: {measurement}"),
    };
    Ok(Outcome {
        ok: matched.is_some(),
        json: json!({ "ok": matched.is_some(), "measurement_hex": measurement.to_hex(), "matched": matched }),
        text,
    })
}

fn cmd_prove(a: ProveArgs) -> Result<Outcome> {
    let lock = load_lock(&a.lock)?;
    let mut inputs = enumerate_inputs(&lock);
    let tree = build_tree(&mut inputs)?;
    let index = match (&a.label, a.index) {
        (Some(label), _) => inputs
            .leaf_index(label)
            .or_else(|| inputs.leaf_index(&format!("dep.{label}")))
            .ok_or_else(|| {
                let known: Vec<&str> = inputs.ordered_leaves.iter().map(|l| l.label.as_str()).collect();
                malformed(format!("no leaf labelled {label:?}; leaves are {known:?}"))
            })?,
        (None, Some(i)) => i,
        (None, None) => return Err(malformed("one of --label or --index is required")),
    };
    let proof = prove_inclusion(&tree, index).map_err(malformed)?;
    let proof_json = serde_json::to_vec_pretty(&proof)?;
    let label = inputs.ordered_leaves[index].label.clone();
    let text = match &a.out {
        Some(path) => {
            write(path, &proof_json)?;
            format!(
                "leaf {index} ({label}) proof written to {}\nroot {}",
                path.display(),
                tree.root()
            )
        }
        None => String::from_utf8(proof_json).expect("JSON is UTF-8"),
    };
    Ok(Outcome::pass(
        json!({ "ok": true, "label": label, "leaf_index": index, "root_hex": tree.root().to_hex(), "proof": proof }),
        text,
    ))
}

fn cmd_verify_proof(a: VerifyProofArgs) -> Result<Outcome> {
    let proof: InclusionProof =
        serde_json::from_slice(&read(&a.proof)?).map_err(|e| malformed(format!("{}: {e}", a.proof.display())))?;
    let root = match (&a.root, &a.provenance) {
        (Some(hex), _) => Digest32::from_hex(hex).map_err(|e| malformed(format!("--root: {e}")))?,
        (None, Some(p)) => parse_statement(&read(p)?)
            .map_err(|e| malformed(format!("{}: {e}", p.display())))?
            .input_merkle_root(),
        (None, None) => return Err(malformed("one of --root or --provenance is required")),
    };
    let ok = verify_inclusion(&root, &proof);
    Ok(Outcome {
        ok,
        json: json!({
            "ok": ok,
            "leaf_index": proof.leaf_index,
            "root_hex": root.to_hex(),
            "computed_root_hex": proof.computed_root().to_hex(),
        }),
        text: if ok {
            format!("leaf {} is included under {root}", proof.leaf_index)
        } else {
            "proof does not reach the root".into()
        },
    })
}

fn keygen(seed: Option<&str>, platform: PlatformId, firmware: u32) -> Result<PlatformKeys> {
    let seed = seed.map(parse_seed).transpose()?;
    Ok(platform_keygen(seed, platform, firmware))
}

fn cmd_keygen(a: KeygenArgs) -> Result<Outcome> {
    let keys = keygen(a.seed.as_deref(), parse_platform(&a.platform_id)?, a.firmware)?;
    write(&a.out, &keys.to_json())?;
    if let Some(path) = &a.truststore {
        write(path, &keys.trust_store().to_json())?;
    }
    let root_id = keys.chain.root_key_id;
    Ok(Outcome::pass(
        json!({
            "ok": true,
            "keys": a.out.display().to_string(),
            "truststore": a.truststore.as_ref().map(|p| p.display().to_string()),
            "root_key_id_hex": root_id.to_hex(),
            "platform_public_key_hex": hex::encode(keys.chain.platform_public_key),
        }),
        format!("root key id {root_id}\nkeys written to {}", a.out.display()),
    ))
}

fn cmd_measure(a: MeasureArgs) -> Result<Outcome> {
    let boot = load_boot(a.boot_fixture.as_deref())?;
    let m = measure_boot_chain(&boot).map_err(malformed)?;
    let components: Vec<Value> = boot
        .iter()
        .map(|c| json!({ "kind": c.kind, "sha384": c.digest().to_hex() }))
        .collect();
    Ok(Outcome::pass(
        json!({ "ok": true, "measurement_hex": m.to_hex(), "components": components }),
        m.to_hex(),
    ))
}

fn cmd_init_sample(a: InitSampleArgs) -> Result<Outcome> {
    let project = write_sample_project(&a.dir).with_context(|| format!("writing sample to {}", a.dir.display()))?;
    let boot = default_boot_fixture();
    let boot_path = a.dir.join("boot-fixture.json");
    write(&boot_path, &boot_fixture_to_json(&boot))?;
    let keys = keygen(a.seed.as_deref(), PlatformId::Sim, 1)?;
    let keys_path = a.dir.join("keys.json");
    let store_path = a.dir.join("truststore.json");
    write(&keys_path, &keys.to_json())?;
    write(&store_path, &keys.trust_store().to_json())?;
    let allowlist_path = a.dir.join("allowlist.json");
    let entry = AllowListEntry {
        measurement: measure_boot_chain(&boot).map_err(malformed)?,
        kettle_version: parse_version(kettle_core::KETTLE_VERSION)?,
        platform_id: PlatformId::Sim,
        min_firmware: 1,
    };
    write(&allowlist_path, &allowlist_to_json(&[entry]))?;
    let paths = json!({
        "ok": true,
        "lock": project.lock_path.display().to_string(),
        "config": project.config_path.display().to_string(),
        "boot_fixture": boot_path.display().to_string(),
        "platform_keys": keys_path.display().to_string(),
        "truststore": store_path.display().to_string(),
        "allowlist": allowlist_path.display().to_string(),
        "output": SAMPLE_OUTPUT,
    });
    Ok(Outcome::pass(
        paths,
        format!("sample project written to {}", a.dir.display()),
    ))
}

fn cmd_demo(a: DemoArgs) -> Result<Outcome> {
    let behavior = match &a.tamper {
        None => HostBehavior::Honest,
        Some(name) => HostBehavior::from_name(name).ok_or_else(|| malformed(format!("unknown scenario {name}")))?,
    };
    let work = tempfile::tempdir()?;
    let project = write_sample_project(work.path())?;
    let keys = platform_keygen(None, PlatformId::Sim, 1);
    let store = keys.trust_store();
    let boot = default_boot_fixture();
    let policy = VerificationPolicy {
        allowlist: vec![AllowListEntry {
            measurement: measure_boot_chain(&boot).map_err(malformed)?,
            kettle_version: parse_version(kettle_core::KETTLE_VERSION)?,
            platform_id: PlatformId::Sim,
            min_firmware: 1,
        }],
        min_version: Version::new(0, 1, 0),
        required_platform: PlatformId::Sim,
        expected_repository: String::new(),
        expected_ref: String::new(),
        expected_nonce: Nonce::zero(),
    };
    let platform = keys.into_platform();
    let mut cfg = SessionConfig::new(&platform, &boot, &project.root, policy.clone(), store.clone());
    cfg.host = behavior;

    match confidential_build_session(cfg) {
        Ok(session) => {
            let lock = load_lock(&project.lock_path)?;
            let check = VerificationPolicy {
                expected_repository: lock.source.repository.clone(),
                expected_ref: lock.source.git_ref.clone(),
                expected_nonce: session.build_nonce,
                ..policy
            };
            let outcome = verify_bundle(&session.bundle, &check, &store)?;
            let transcript = session.transcript.to_json();
            let text = format!(
                "session completed; host saw {} plaintext source bytes; bundle verification {}\n{}",
                session.transcript.plaintext_source_bytes_seen_by_host,
                if outcome.passed { "passed" } else { "FAILED" },
                serde_json::to_string_pretty(&transcript)?
            );
            Ok(Outcome {
                ok: outcome.passed,
                json: json!({ "ok": outcome.passed, "aborted": false, "transcript": transcript, "verification": outcome }),
                text,
            })
        }
        Err(ConfidentialError::AbortedBeforeDisclosure { reason, transcript }) => {
            let t = transcript.to_json();
            let text = format!(
                "AbortedBeforeDisclosure: {reason}\nhost saw {} plaintext source bytes\n{}",
                transcript.plaintext_source_bytes_seen_by_host,
                serde_json::to_string_pretty(&t)?
            );
            Ok(Outcome {
                ok: false,
                json: json!({
                    "ok": false,
                    "aborted": true,
                    "error": "AbortedBeforeDisclosure",
                    "reason": reason.code(),
                    "reason_text": reason.to_string(),
                    "transcript": t,
                }),
                text,
            })
        }
        Err(e) => Err(e.into()),
    }
}
