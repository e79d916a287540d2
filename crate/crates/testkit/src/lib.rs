//! Test fixtures for b2mdf: a binary XML writer, a DEX assembler, an APK
//! packer, a hand-decoded fixture corpus and deterministic participants.

pub mod apk;
pub mod axml;
pub mod dex;
pub mod fixtures;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use b2mdf::consensus::SimNetConfig;
use b2mdf::engines::EngineConfig;
use b2mdf::ledger::{KeyRing, ParticipantIdentity, Registry, Role, SecretKey};
use b2mdf::pipeline::ExtractorIds;

/// Deterministic participant set: the six extractors, `engines` detection
/// engines `de-1..`, one third party and one determinant agent.
#[derive(Debug, Clone)]
pub struct Consortium {
    pub registry: Registry,
    pub keys: KeyRing,
    pub engine_ids: Vec<String>,
}

pub fn key_for(id: &str) -> SecretKey {
    SecretKey::from_seed_phrase(&format!("b2mdf-testkit/{id}"))
}

pub fn participant(id: &str, role: Role) -> ParticipantIdentity {
    ParticipantIdentity {
        id: id.to_string(),
        role,
        public_key: key_for(id).public_key(),
    }
}

pub fn engine_id(i: usize) -> String {
    format!("de-{i:02}")
}

impl Consortium {
    pub fn new(engines: usize) -> Consortium {
        let ex = ExtractorIds::default();
        let mut ids: Vec<(String, Role)> = [
            &ex.opcodes,
            &ex.permissions,
            &ex.api_calls,
            &ex.commands,
            &ex.syscall_ngrams,
            &ex.resources,
        ]
        .into_iter()
        .map(|id| (id.clone(), Role::FeatureExtractor))
        .collect();
        let engine_ids: Vec<String> = (1..=engines).map(engine_id).collect();
        ids.extend(engine_ids.iter().map(|id| (id.clone(), Role::DetectionEngine)));
        ids.push(("tp-auditor".into(), Role::ThirdParty));
        ids.push(("da-store".into(), Role::DeterminantAgent));

        let mut keys = KeyRing::new();
        for (id, _) in &ids {
            keys.insert(id.clone(), key_for(id));
        }
        let registry = Registry::from_participants(ids.iter().map(|(id, role)| participant(id, *role)))
            .expect("unique fixture ids");
        Consortium {
            registry,
            keys,
            engine_ids,
        }
    }

    pub fn identity(&self, id: &str) -> &ParticipantIdentity {
        self.registry.get(id).expect("known fixture participant")
    }
}

/// Heuristic weights that separate the fixture corpus.
pub fn heuristic_weights() -> BTreeMap<String, f64> {
    [
        ("__bias", -3.0),
        ("perm:SEND_SMS", 2.0),
        ("perm:INSTALL_PACKAGES", 2.5),
        ("api:Landroid/telephony/TelephonyManager;->getDeviceId", 1.5),
        ("cmd:/system/bin/su", 2.0),
        ("cmd:mount", 1.0),
        ("sys2:fork|execve", 0.75),
        ("op:6e", 0.1),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Engine set for an n-engine consortium: all heuristic, with a family tag
/// on the first one.
pub fn fixture_engines(c: &Consortium) -> Vec<EngineConfig> {
    c.engine_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut e = EngineConfig::heuristic(id.clone(), heuristic_weights());
            if i == 0 {
                e.family_tag = Some("smsthief".into());
            }
            e
        })
        .collect()
}

/// Writes registry, keys, scenario and deployment config under `dir` and
/// returns the config path. The store lives in `dir/store`.
pub fn write_deployment(dir: &Path, c: &Consortium, engines: &[EngineConfig], scenario: &SimNetConfig) -> PathBuf {
    fs::create_dir_all(dir).expect("create deployment dir");
    c.registry.save(&dir.join("registry.json")).expect("write registry");
    c.keys.save(&dir.join("keys.json")).expect("write keys");
    fs::write(
        dir.join("scenario.json"),
        serde_json::to_vec_pretty(scenario).expect("encode scenario"),
    )
    .expect("write scenario");
    let config = serde_json::json!({
        "store_path": "store",
        "registry_path": "registry.json",
        "keys_path": "keys.json",
        "scenario_path": "scenario.json",
        "engines": engines,
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_vec_pretty(&config).expect("encode config")).expect("write config");
    path
}

/// Every file under `dir`, keyed by relative path, for byte-level
/// comparison of stores.
pub fn snapshot_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("read dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("under root").to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).expect("read file"));
            }
        }
    }
    out
}
