mod common;

use std::cell::RefCell;

use common::{build, keys, policy, project, request, store, NONCE};
use kettle_core::attestation::{measure_boot_chain, verify_report};
use kettle_core::digest::sha256;
use kettle_core::orchestrator::{read_bundle, write_bundle, Orchestrator, Stage, PROVENANCE_FILE};
use kettle_core::provenance::parse_statement;
use kettle_core::sample::{default_boot_fixture, SampleProject, SAMPLE_OUTPUT};
use kettle_core::verifier::verify_bundle;

#[test]
fn sample_build_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = build(dir.path(), NONCE);
    let outcome = verify_bundle(&bundle, &policy(NONCE), &store()).unwrap();
    assert!(outcome.passed, "{outcome:?}");
    assert_eq!(outcome.passed_steps(), 4);

    let art = bundle.artifact(SAMPLE_OUTPUT).unwrap();
    assert_eq!(art.bytes, SampleProject::expected_output());
    assert_eq!(
        bundle.report.measurement,
        measure_boot_chain(&default_boot_fixture()).unwrap()
    );
    assert!(verify_report(&bundle.report, &bundle.chain, &store()).is_ok());
}

#[test]
fn report_data_layout_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let bundle = build(dir.path(), NONCE);
    write_bundle(&bundle, out.path()).unwrap();

    let on_disk = std::fs::read(out.path().join(PROVENANCE_FILE)).unwrap();
    let back = read_bundle(out.path()).unwrap();
    assert_eq!(back.report.report_data[..32], sha256(&on_disk).0);
    assert_eq!(back.report.report_data[32..], NONCE.0);
    assert_eq!(back.provenance_bytes, bundle.provenance_bytes);
    assert_eq!(back.report.encode(), bundle.report.encode());
    assert_eq!(back.artifacts, bundle.artifacts);
}

#[test]
fn fixed_clock_builds_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = build(a.path(), NONCE);
    let second = build(b.path(), NONCE);
    assert_eq!(first.provenance_bytes, second.provenance_bytes);
    assert_eq!(first.artifacts, second.artifacts);
    // Ed25519 is deterministic, so the whole report repeats.
    assert_eq!(first.report, second.report);

    let other = build(tempfile::tempdir().unwrap().path(), kettle_core::Nonce([1; 32]));
    assert_ne!(other.provenance_bytes, first.provenance_bytes);
    let st = parse_statement(&other.provenance_bytes).unwrap();
    assert_eq!(
        st.input_merkle_root(),
        parse_statement(&first.provenance_bytes).unwrap().input_merkle_root()
    );
}

#[test]
fn stages_run_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let (project, lock) = project(dir.path());
    let platform = keys().into_platform();
    let seen = RefCell::new(Vec::new());
    Orchestrator::new(&platform, default_boot_fixture())
        .with_observer(|s| seen.borrow_mut().push(s))
        .run_attested_build(&request(&project, &lock, NONCE), &lock, dir.path())
        .unwrap();
    assert_eq!(
        seen.into_inner(),
        vec![
            Stage::VerifyInputs,
            Stage::EnumerateInputs,
            Stage::BuildTree,
            Stage::Boot,
            Stage::ExecuteBuild,
            Stage::DigestOutputs,
            Stage::AssembleProvenance,
            Stage::Attest,
        ]
    );
}

#[test]
fn output_directory_inside_source_is_not_copied() {
    let dir = tempfile::tempdir().unwrap();
    let (project, lock) = project(dir.path());
    let platform = keys().into_platform();
    let out = dir.path().join("out");
    let first = Orchestrator::new(&platform, default_boot_fixture())
        .run_attested_build(&request(&project, &lock, NONCE), &lock, dir.path())
        .unwrap();
    write_bundle(&first, &out).unwrap();
    let second = Orchestrator::new(&platform, default_boot_fixture())
        .exclude_path(&out)
        .run_attested_build(&request(&project, &lock, NONCE), &lock, dir.path())
        .unwrap();
    assert_eq!(second.artifacts, first.artifacts);
}
