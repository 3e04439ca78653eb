#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

pub const SEED: &str = "0707070707070707070707070707070707070707070707070707070707070707";
pub const NONCE: &str = "abababababababababababababababababababababababababababababababab";
pub const REPO: &str = "https://github.com/org/repo";
pub const REF: &str = "refs/heads/main";

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", self.stdout))
    }

    /// First evaluated step that failed, from `verify --json`.
    pub fn failed_step(&self) -> Option<String> {
        self.json()["step_results"]
            .as_array()?
            .iter()
            .find(|r| r["evaluated"] == true && r["passed"] == false)
            .map(|r| r["step"].as_str().unwrap().to_owned())
    }
}

pub fn kettle<I, S>(args: I) -> Run
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = Command::new(env!("CARGO_BIN_EXE_kettle"))
        .args(args)
        .output()
        .expect("spawn kettle");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// A sample project written by `init-sample`.
pub struct Fixture {
    pub dir: PathBuf,
}

impl Fixture {
    pub fn new(dir: &Path) -> Self {
        let run = kettle(["init-sample", "--dir", dir.to_str().unwrap(), "--seed", SEED]);
        assert_eq!(run.code, 0, "{}", run.stderr);
        Fixture { dir: dir.to_path_buf() }
    }

    pub fn path(&self, name: &str) -> String {
        self.dir.join(name).to_str().unwrap().to_owned()
    }

    /// `build --json` with the fixture's files; `extra` is flag/value pairs
    /// that override the defaults.
    pub fn build(&self, out: &str, extra: &[&str]) -> Run {
        let defaults = [
            ("--lock", self.path("kettle.lock.json")),
            ("--config", self.path("kettle-build.json")),
            ("--platform-keys", self.path("keys.json")),
            ("--out", self.path(out)),
            ("--nonce", NONCE.to_owned()),
        ];
        let pairs: Vec<(&str, &str)> = extra.chunks(2).map(|c| (c[0], c[1])).collect();
        kettle(args("build", &defaults, &pairs))
    }

    pub fn verify(&self, bundle: &str, extra: &[(&str, &str)]) -> Run {
        let defaults = [
            ("--bundle", self.path(bundle)),
            ("--allowlist", self.path("allowlist.json")),
            ("--truststore", self.path("truststore.json")),
            ("--expect-repo", REPO.to_owned()),
            ("--expect-ref", REF.to_owned()),
            ("--expect-nonce", NONCE.to_owned()),
            ("--min-version", "0.4.0".to_owned()),
        ];
        kettle(args("verify", &defaults, extra))
    }
}

fn args(cmd: &str, defaults: &[(&str, String)], extra: &[(&str, &str)]) -> Vec<String> {
    let mut flags: Vec<(String, String)> = defaults.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    for (k, v) in extra {
        match flags.iter_mut().find(|(f, _)| f == k) {
            Some(slot) => slot.1 = v.to_string(),
            None => flags.push((k.to_string(), v.to_string())),
        }
    }
    let mut out = vec!["--json".to_owned(), cmd.to_owned()];
    for (k, v) in flags {
        out.push(k);
        out.push(v);
    }
    out
}

pub fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}
