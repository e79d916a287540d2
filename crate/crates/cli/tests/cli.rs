use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use b2mdf::consensus::SimNetConfig;
use b2mdf_testkit::fixtures::{self, AppFixture};
use b2mdf_testkit::{fixture_engines, write_deployment, Consortium};
use serde_json::Value;
use tempfile::TempDir;

fn b2mdf(args: &[&str]) -> (i32, Value) {
    let out = Command::new(env!("CARGO_BIN_EXE_b2mdf"))
        .args(args)
        .env_remove("B2MDF_STORE")
        .output()
        .expect("run b2mdf");
    let text = String::from_utf8(out.stdout).unwrap();
    let doc = serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("{e}: {text}"));
    (out.status.code().unwrap(), doc)
}

struct Env {
    dir: TempDir,
    config: PathBuf,
}

impl Env {
    fn new() -> Env {
        let dir = TempDir::new().unwrap();
        let c = Consortium::new(4);
        let config = write_deployment(dir.path(), &c, &fixture_engines(&c), &SimNetConfig::reliable(7));
        Env { dir, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cfg(&self) -> &str {
        self.config.to_str().unwrap()
    }

    fn write_app(&self, app: &AppFixture) -> Vec<String> {
        let apk = self.path(&format!("{}.apk", app.name));
        fs::write(&apk, &app.apk).unwrap();
        let mut args = vec!["ingest".into(), "--config".into(), self.cfg().into(), "--apk".into(), s(&apk)];
        if let Some(t) = &app.trace {
            let p = self.path(&format!("{}.trace", app.name));
            fs::write(&p, t).unwrap();
            args.extend(["--trace".into(), s(&p)]);
        }
        if let Some(r) = &app.samples {
            let p = self.path(&format!("{}.csv", app.name));
            fs::write(&p, r).unwrap();
            args.extend(["--samples".into(), s(&p)]);
        }
        args
    }
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn run(args: &[String]) -> (i32, Value) {
    b2mdf(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn full_flow_through_the_binary() {
    let env = Env::new();
    let app = fixtures::app_fakebank();
    let (code, doc) = run(&env.write_app(&app));
    assert_eq!(code, 0, "{doc}");
    assert_eq!(doc["ok"], true);
    assert_eq!(doc["command"], "ingest");
    assert_eq!(doc["result"]["app_id"], app.app_id);

    let version = app.version_code.to_string();
    let target = ["--app", app.app_id, "--version", version.as_str()];
    let (code, doc) = b2mdf(&[&["scan", "--config", env.cfg()][..], &target].concat());
    assert_eq!(code, 0, "{doc}");
    assert_eq!(doc["result"]["appended"].as_array().unwrap().len(), 4);

    let transcript = env.path("round.jsonl");
    let (code, doc) = b2mdf(
        &[&["decide", "--config", env.cfg(), "--transcript", transcript.to_str().unwrap()][..], &target].concat(),
    );
    assert_eq!(code, 0, "{doc}");
    assert_eq!(doc["result"]["verdict"]["verdict"], "Malicious");
    assert_eq!(doc["result"]["round"]["status"], "Committed");
    let lines = fs::read_to_string(&transcript).unwrap().lines().count() as u64;
    assert_eq!(lines, doc["result"]["round"]["messages"].as_u64().unwrap());

    let store = env.path("store");
    let (code, doc) = b2mdf(&["verify", "--store", store.to_str().unwrap()]);
    assert_eq!(code, 0, "{doc}");
    assert_eq!(doc["result"]["valid"], true);

    let out = env.path("export.json");
    let (code, doc) =
        b2mdf(&[&["export", "--store", store.to_str().unwrap(), "--out", out.to_str().unwrap()][..], &target].concat());
    assert_eq!(code, 0, "{doc}");
    let registry = store.join("registry.json");
    let (code, doc) =
        b2mdf(&["verify-export", "--file", out.to_str().unwrap(), "--registry", registry.to_str().unwrap()]);
    assert_eq!(code, 0, "{doc}");
    assert!(doc["result"]["payloads"].as_u64().unwrap() >= 4);
}

#[test]
fn usage_errors_exit_two() {
    let (code, doc) = b2mdf(&["scan", "--app", "x"]);
    assert_eq!(code, 2);
    assert_eq!(doc["ok"], false);
    assert_eq!(doc["error"]["kind"], "usage");
    let (code, _) = b2mdf(&["export", "--app", "x", "--version", "1", "--out", "o"]);
    assert_eq!(code, 2);
    let (code, _) = b2mdf(&["frobnicate"]);
    assert_eq!(code, 2);
}

#[test]
fn export_falls_back_to_store_variable() {
    let env = Env::new();
    assert_eq!(run(&env.write_app(&fixtures::app_notes(1))).0, 0);
    let out = env.path("notes.json");
    let status = Command::new(env!("CARGO_BIN_EXE_b2mdf"))
        .args(["export", "--app", "com.example.notes", "--version", "1", "--out", out.to_str().unwrap()])
        .env("B2MDF_STORE", env.path("store"))
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stdout));
    assert!(out.is_file());
}

#[test]
fn domain_errors_exit_one() {
    let env = Env::new();
    let (code, doc) = b2mdf(&["decide", "--config", env.cfg(), "--app", "com.none", "--version", "1"]);
    assert_eq!(code, 1);
    assert_eq!(doc["command"], "decide");
    assert_eq!(doc["error"]["kind"], "domain");

    let args = env.write_app(&fixtures::app_notes(1));
    assert_eq!(run(&args).0, 0);
    let (code, doc) = run(&args);
    assert_eq!(code, 1);
    assert!(doc["error"]["message"].as_str().unwrap().contains("already ingested"));

    let (code, _) = b2mdf(&["verify", "--store", env.path("nowhere").to_str().unwrap()]);
    assert_eq!(code, 1);
}

#[test]
fn tampered_store_fails_verification_with_detail() {
    let env = Env::new();
    assert_eq!(run(&env.write_app(&fixtures::app_notes(1))).0, 0);
    let store = env.path("store");
    let chain = store.join("com.example.notes").join("DIPB.chain");
    let mut bytes = fs::read(&chain).unwrap();
    let at = bytes.iter().position(|&b| b == b'\n').unwrap() + 40;
    bytes[at] ^= 0x04;
    fs::write(&chain, bytes).unwrap();
    let (code, doc) = b2mdf(&["verify", "--store", store.to_str().unwrap()]);
    assert_eq!(code, 1, "{doc}");
    let audit = &doc["error"]["detail"]["chains"][0]["report"];
    assert_eq!(audit["valid"], false);
    assert!(audit["first_bad_height"].as_u64().unwrap() <= 2);
}
