mod common;

use common::{copy_dir, kettle, Fixture, NONCE};

fn fixture() -> (tempfile::TempDir, Fixture) {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(dir.path());
    assert_eq!(fx.build("out", &[]).code, 0);
    (dir, fx)
}

#[test]
fn build_codes() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(dir.path());
    let ok = fx.build("out", &[]);
    assert_eq!(ok.code, 0, "{}", ok.stderr);
    let j = ok.json();
    assert_eq!(j["ok"], true);
    assert_eq!(j["subjects"][0]["name"], "dist/my-app");
    assert_eq!(j["build_nonce_hex"], NONCE);
    assert!(fx.dir.join("out/provenance.json").is_file());

    let missing = kettle(["build", "--lock", &fx.path("kettle.lock.json")]);
    assert_eq!(missing.code, 2);

    let bad_nonce = fx.build("out2", &["--nonce", "abc"]);
    assert_eq!(bad_nonce.code, 2);
    assert_eq!(bad_nonce.json()["exit_code"], 2);

    std::fs::write(fx.dir.join("vendor/serde-1.0.228.crate"), b"substituted").unwrap();
    let corrupted = fx.build("out3", &[]);
    assert_eq!(corrupted.code, 1);
    assert!(corrupted.json()["error"].as_str().unwrap().contains("serde"));
    let plain = kettle([
        "build",
        "--lock",
        &fx.path("kettle.lock.json"),
        "--config",
        &fx.path("kettle-build.json"),
        "--platform-keys",
        &fx.path("keys.json"),
        "--out",
        &fx.path("out4"),
    ]);
    assert_eq!(plain.code, 1);
    assert!(plain.stderr.contains("serde"), "{}", plain.stderr);

    std::fs::write(fx.dir.join("kettle-build.json"), b"{\"build_type\": 3}").unwrap();
    assert_eq!(fx.build("out5", &[]).code, 2);
}

#[test]
fn verify_codes() {
    let (_dir, fx) = fixture();
    let ok = fx.verify("out", &[]);
    assert_eq!(ok.code, 0, "{}", ok.stdout);
    let j = ok.json();
    let keys: Vec<&String> = j.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["passed", "step_results"]);
    assert_eq!(j["step_results"].as_array().unwrap().len(), 4);

    copy_dir(&fx.dir.join("out"), &fx.dir.join("swapped"));
    std::fs::write(fx.dir.join("swapped/artifacts/dist/my-app"), b"trojan").unwrap();
    let swapped = fx.verify("swapped", &[]);
    assert_eq!(swapped.code, 1);
    assert_eq!(swapped.failed_step().as_deref(), Some("artifact"));

    std::fs::write(fx.dir.join("empty-allowlist.json"), b"[]").unwrap();
    let not_listed = fx.verify("out", &[("--allowlist", &fx.path("empty-allowlist.json"))]);
    assert_eq!(not_listed.code, 1);
    assert_eq!(not_listed.failed_step().as_deref(), Some("attestation"));

    assert_eq!(fx.verify("does-not-exist", &[]).code, 2);
    assert_eq!(fx.verify("out", &[("--expect-nonce", "zz")]).code, 2);
    assert_eq!(fx.verify("out", &[("--min-version", "1.0.0-rc1")]).code, 2);
    std::fs::write(fx.dir.join("bad-allowlist.json"), b"[{\"measurement_hex\": \"00\"}]").unwrap();
    assert_eq!(
        fx.verify("out", &[("--allowlist", &fx.path("bad-allowlist.json"))])
            .code,
        2
    );

    let text = kettle([
        "verify",
        "--bundle",
        &fx.path("swapped"),
        "--allowlist",
        &fx.path("allowlist.json"),
        "--truststore",
        &fx.path("truststore.json"),
        "--expect-repo",
        common::REPO,
        "--expect-ref",
        common::REF,
        "--expect-nonce",
        NONCE,
        "--min-version",
        "0.4.0",
    ]);
    assert_eq!(text.code, 1);
    assert!(text.stdout.contains("FAIL  artifact"), "{}", text.stdout);
}

#[test]
fn allowlist_codes() {
    let dir = tempfile::tempdir().unwrap();
    let list = dir.path().join("list.json");
    let list = list.to_str().unwrap();
    let added = kettle([
        "--json",
        "allowlist",
        "add",
        "--allowlist",
        list,
        "--measurement",
        &"ab".repeat(48),
        "--min-firmware",
        "2",
    ]);
    assert_eq!(added.code, 0, "{}", added.stderr);
    assert_eq!(added.json()["entries"], 1);

    let check = |m: &str, fw: &str| {
        kettle([
            "allowlist",
            "check",
            "--allowlist",
            list,
            "--measurement",
            m,
            "--firmware",
            fw,
        ])
        .code
    };
    assert_eq!(check(&"ab".repeat(48), "2"), 0);
    assert_eq!(check(&"ab".repeat(48), "1"), 1);
    assert_eq!(check(&"cd".repeat(48), "2"), 1);
    assert_eq!(check("abc", "2"), 2);
    assert_eq!(
        kettle(["allowlist", "check", "--allowlist", list, "--firmware", "2"]).code,
        2
    );
}

#[test]
fn inclusion_codes() {
    let (_dir, fx) = fixture();
    let proof = fx.path("proof.json");
    let prove = kettle([
        "--json",
        "inclusion",
        "prove",
        "--lock",
        &fx.path("kettle.lock.json"),
        "--label",
        "dep.serde@1.0.228",
        "--out",
        &proof,
    ]);
    assert_eq!(prove.code, 0, "{}", prove.stderr);
    let root = prove.json()["root_hex"].as_str().unwrap().to_owned();

    assert_eq!(
        kettle([
            "inclusion",
            "verify",
            "--proof",
            &proof,
            "--provenance",
            &fx.path("out/provenance.json")
        ])
        .code,
        0
    );
    assert_eq!(kettle(["verify-inclusion", "--proof", &proof, "--root", &root]).code, 0);
    assert_eq!(
        kettle(["inclusion", "verify", "--proof", &proof, "--root", &"00".repeat(32)]).code,
        1
    );
    assert_eq!(
        kettle([
            "inclusion",
            "prove",
            "--lock",
            &fx.path("kettle.lock.json"),
            "--label",
            "nope"
        ])
        .code,
        2
    );
    assert_eq!(
        kettle([
            "prove-inclusion",
            "--lock",
            &fx.path("kettle.lock.json"),
            "--index",
            "99"
        ])
        .code,
        2
    );
    std::fs::write(&proof, b"{\"leaf_index\": 0}").unwrap();
    assert_eq!(
        kettle(["inclusion", "verify", "--proof", &proof, "--root", &root]).code,
        2
    );
}

#[test]
fn keygen_and_measure_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k.json");
    let a = kettle([
        "--json",
        "keygen",
        "--seed",
        common::SEED,
        "--out",
        out.to_str().unwrap(),
    ]);
    let b = kettle([
        "--json",
        "keygen",
        "--seed",
        common::SEED,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(a.code, 0);
    assert_eq!(a.json()["root_key_id_hex"], b.json()["root_key_id_hex"]);
    assert_eq!(
        kettle(["keygen", "--seed", "xyz", "--out", out.to_str().unwrap()]).code,
        2
    );
    assert_eq!(
        kettle(["keygen", "--platform-id", "sgx", "--out", out.to_str().unwrap()]).code,
        2
    );

    let m = kettle(["--json", "measure"]);
    assert_eq!(m.code, 0);
    assert_eq!(m.json()["components"].as_array().unwrap().len(), 6);
    std::fs::write(dir.path().join("boot.json"), b"{}").unwrap();
    assert_eq!(
        kettle([
            "measure",
            "--boot-fixture",
            dir.path().join("boot.json").to_str().unwrap()
        ])
        .code,
        2
    );
}

#[test]
fn confidential_demo_codes() {
    let honest = kettle(["--json", "confidential-demo"]);
    assert_eq!(honest.code, 0, "{}", honest.stderr);
    let j = honest.json();
    assert_eq!(j["transcript"]["plaintext_source_bytes_seen_by_host"], 0);
    assert_eq!(j["verification"]["passed"], true);

    let replay = kettle(["confidential-demo", "--tamper", "replayed-cvm"]);
    assert_eq!(replay.code, 1);
    assert!(replay.stdout.contains("AbortedBeforeDisclosure"));
    let j = kettle(["--json", "confidential-demo", "--tamper", "replayed-cvm"]).json();
    assert_eq!(j["error"], "AbortedBeforeDisclosure");

    assert_eq!(kettle(["confidential-demo", "--tamper", "bogus"]).code, 2);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(kettle(["frobnicate"]).code, 2);
    assert_eq!(kettle(["--help"]).code, 0);
}

#[test]
fn usage_errors_are_json_with_flag() {
    let run = kettle(["--json", "build", "--lock", "x"]);
    assert_eq!(run.code, 2);
    assert_eq!(run.json()["exit_code"], 2);
}
