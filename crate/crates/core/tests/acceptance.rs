//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use b2mdf::apk_static::{decode_method, open_apk, opcode_trace, parse_dex, parse_manifest, OpcodeTrace};
use b2mdf::consensus::{
    quorum_threshold, run_round, AppChains, FaultBehavior, FaultyEngine, RoundStatus, SimNetConfig,
};
use b2mdf::dynamic_features::{parse_syscall_trace, syscall_ngrams};
use b2mdf::engines::{assemble_from_payloads, heuristic_score, EngineConfig, ScoreRecord, Verdict};
use b2mdf::ledger::{
    authorize, Action, BlockSignature, Chain, ChainKind, ChainStore, LedgerError, Registry, Role,
};
use b2mdf::payload::{AppVersion, FeaturePayload, ResourceFeature};
use b2mdf::pipeline::{
    decide, export_features, ingest, scan, verify_export, verify_store, Deployment, DynamicInputs,
};
use b2mdf_testkit::fixtures::{self, app_corpus, dex_fixtures, manifest_fixtures};
use b2mdf_testkit::{fixture_engines, snapshot_dir, write_deployment, Consortium};
use ed25519_dalek::{Signature, VerifyingKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest as _, Sha256};
use tempfile::TempDir;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("tamper evidence", tamper_evidence),
        ("quorum algebra and fault bound", quorum_algebra),
        ("parser oracle equivalence", parser_oracles),
        ("example trace reproduction", example_trace),
        ("fuzz totality", fuzz_totality),
        ("end-to-end determinism", determinism),
        ("heuristic numeric check", logistic_check),
        ("role-matrix enforcement", role_matrix),
        ("export verifiability", export_verifiability),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {}: {name}: PASS ({detail}; {secs:.2}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: {name}: FAIL ({detail}; {secs:.2}s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn random_payload(rng: &mut ChaCha8Rng, i: usize) -> Value {
    let len = rng.random_range(0..24);
    let blob: String = (0..len).map(|_| char::from(rng.random_range(b'a'..=b'z'))).collect();
    json!({
        "kind": "test",
        "index": i,
        "blob": blob,
        "value": rng.random_range(-1000.0..1000.0),
        "flags": [rng.random::<bool>(), rng.random::<bool>()],
    })
}

/// Builds a random valid chain of 1..=20 blocks in `store`.
fn random_chain(rng: &mut ChaCha8Rng, c: &Consortium, store: &ChainStore, app: &str) -> (ChainKind, usize) {
    let (kind, role) = if rng.random::<bool>() {
        (ChainKind::Dipb, Role::FeatureExtractor)
    } else {
        (ChainKind::Depb, Role::DetectionEngine)
    };
    let authors: Vec<_> = c.registry.with_role(role).cloned().collect();
    let mut chain = Chain::new(app, kind);
    let len = rng.random_range(1..=20);
    for i in 0..len {
        let author = &authors[rng.random_range(0..authors.len())];
        let key = c.keys.key_for(author).unwrap();
        let payload = random_payload(rng, i);
        chain.append(&payload, author, key, rng.random_range(0..1_000_000)).unwrap();
    }
    store.save(&chain).unwrap();
    (kind, len)
}

fn tamper_evidence() -> Outcome {
    let started = Instant::now();
    let c = Consortium::new(4);
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a3e);
    let mut flagged = 0;
    for trial in 0..100 {
        let store = ChainStore::new(dir.path().join(format!("s{trial}")));
        let app = format!("app.t{trial}");
        let (kind, len) = random_chain(&mut rng, &c, &store, &app);
        let path = store.chain_path(&app, kind).unwrap();
        ensure!(verify_store(store.root(), &c.registry).unwrap().valid, "trial {trial}: fresh chain invalid");

        let mut bytes = fs::read(&path).unwrap();
        let at = rng.random_range(0..bytes.len());
        bytes[at] ^= rng.random_range(1..=255u8);
        let mutated_height = bytes[..at].iter().filter(|&&b| b == b'\n').count() as u64;
        fs::write(&path, &bytes).unwrap();

        let report = verify_store(store.root(), &c.registry).unwrap();
        let audit = &report.chains[0].report;
        ensure!(!audit.valid, "trial {trial}: flip at byte {at} of a {len}-block chain went unnoticed");
        let bad = audit.first_bad_height.unwrap();
        ensure!(
            bad.abs_diff(mutated_height) <= 1,
            "trial {trial}: flagged height {bad}, mutation at {mutated_height}"
        );
        flagged += 1;
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("{flagged}/100 mutations flagged at or next to the mutated block"))
}

/// Smallest q with 3q >= 2n.
fn quorum_oracle(n: usize) -> usize {
    (0..=n).find(|q| 3 * q >= 2 * n).unwrap()
}

fn score_chains(c: &Consortium, app: &str) -> AppChains {
    let mut depb = Chain::new(app, ChainKind::Depb);
    for id in &c.engine_ids {
        let author = c.identity(id);
        let record = ScoreRecord {
            engine_id: id.clone(),
            app_id: app.into(),
            version_code: 1,
            malice_score: 0.9,
            verdict: Verdict::Malicious,
            evidence: vec![],
            detail: "fixture".into(),
        };
        depb.append_record(&record, author, c.keys.key_for(author).unwrap(), 0).unwrap();
    }
    AppChains {
        dipb: Chain::new(app, ChainKind::Dipb),
        depb,
        cb: Chain::new(app, ChainKind::Cb),
    }
}

fn quorum_algebra() -> Outcome {
    let started = Instant::now();
    for n in 1..100 {
        ensure!(quorum_threshold(n) == Ok(quorum_oracle(n)), "quorum_threshold({n}) wrong");
    }
    let mut cases = 0;
    for n in 1..=9 {
        let c = Consortium::new(n);
        let base = score_chains(&c, "app.quorum");
        let q = quorum_oracle(n);
        for f in 0..=n {
            for behavior in [FaultBehavior::FlipVerdict, FaultBehavior::Silent] {
                for (seed, max_delay_ticks) in [(1, 0), (2, 5)] {
                    let mut scenario = SimNetConfig::reliable(seed);
                    scenario.max_delay_ticks = max_delay_ticks;
                    scenario.faulty_engines = c.engine_ids[n - f..]
                        .iter()
                        .map(|id| FaultyEngine {
                            engine_id: id.clone(),
                            behavior,
                        })
                        .collect();
                    let mut chains = base.clone();
                    let outcome = run_round(&scenario, &c.registry, &c.keys, &mut chains, 1, 0)
                        .map_err(|e| format!("n={n} f={f}: {e}"))?;
                    let honest_committed = outcome.status == RoundStatus::Committed
                        && chains
                            .cb
                            .blocks()
                            .last()
                            .and_then(|b| b.payload.get("proposed_verdict").cloned())
                            == Some(json!("Malicious"));
                    ensure!(
                        honest_committed == (n - f >= q),
                        "n={n} f={f} {behavior:?} seed={seed}: honest commit {honest_committed}, expected {}",
                        n - f >= q
                    );
                    cases += 1;
                }
            }
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("n in 1..100 exhaustive; {cases} fault-bound rounds"))
}

fn parser_oracles() -> Outcome {
    let dexes = dex_fixtures();
    let mut methods = 0;
    for fx in &dexes {
        let dex = parse_dex(&fx.bytes).map_err(|e| format!("{}: {e}", fx.name))?;
        ensure!(dex.code_items.len() == fx.methods.len(), "{}: method count", fx.name);
        for (item, oracle) in dex.code_items.iter().zip(&fx.methods) {
            let mut t = OpcodeTrace::default();
            let consumed = decode_method(&item.insns, item.method_index, &mut t).map_err(|e| e.to_string())?;
            ensure!(item.insns.len() == oracle.insns_size, "{}: insns_size", fx.name);
            ensure!(consumed == oracle.insns_size, "{}: consumed {consumed} of {}", fx.name, oracle.insns_size);
            ensure!(t.opcodes == oracle.opcodes, "{}: opcodes {:02x?}", fx.name, t.opcodes);
            methods += 1;
        }
        let whole = opcode_trace(&dex).map_err(|e| e.to_string())?;
        ensure!(whole.opcodes == fx.sequence(), "{}: file sequence", fx.name);
    }
    let manifests = manifest_fixtures();
    for fx in &manifests {
        let a = parse_manifest(&fx.axml()).map_err(|e| format!("{} axml: {e}", fx.name))?;
        let t = parse_manifest(fx.text().as_bytes()).map_err(|e| format!("{} text: {e}", fx.name))?;
        ensure!(a == t, "{}: encodings disagree", fx.name);
        ensure!(a.package_name == fx.oracle.package && a.version_code == fx.oracle.version_code, "{}", fx.name);
        ensure!(a.permissions == fx.oracle.permissions, "{}: permissions", fx.name);
    }
    ensure!(dexes.len() >= 5 && manifests.len() >= 3, "corpus too small");
    Ok(format!(
        "{} DEX fixtures ({methods} methods), {} manifests in both encodings",
        dexes.len(),
        manifests.len()
    ))
}

fn example_trace() -> Outcome {
    let app = AppVersion::new("app.trace", 1);
    let trace = parse_syscall_trace(fixtures::EXAMPLE_TRACE, &app).map_err(|e| e.to_string())?;
    ensure!(trace.calls.len() == 10, "{} calls", trace.calls.len());
    let uni = syscall_ngrams(&trace, 1).map_err(|e| e.to_string())?;
    let expected: BTreeMap<String, u64> = [
        ("open", 1),
        ("read", 2),
        ("write", 2),
        ("fork", 2),
        ("fstat", 1),
        ("mprotect", 1),
        ("close", 1),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    ensure!(uni.counts == expected, "unigrams {:?}", uni.counts);
    let bi = syscall_ngrams(&trace, 2).map_err(|e| e.to_string())?;
    let total: u64 = bi.counts.values().sum();
    ensure!(total == 9, "{total} bigrams");
    Ok("10 calls, unigram counts exact, 9 bigrams".into())
}

fn fuzz_input(rng: &mut ChaCha8Rng, seeds: &[Vec<u8>]) -> Vec<u8> {
    let len = rng.random_range(0..=64 * 1024);
    match rng.random_range(0..4) {
        0 => (0..len).map(|_| rng.random()).collect(),
        1 => {
            let mut v: Vec<u8> = (0..len.max(0x70)).map(|_| rng.random()).collect();
            v[..8].copy_from_slice(b"dex\n035\0");
            v
        }
        2 => {
            let mut v: Vec<u8> = (0..len.max(8)).map(|_| rng.random()).collect();
            v[..4].copy_from_slice(&[3, 0, 8, 0]);
            v
        }
        _ => {
            let mut v = seeds[rng.random_range(0..seeds.len())].clone();
            for _ in 0..rng.random_range(1..16) {
                let at = rng.random_range(0..v.len());
                v[at] = rng.random();
            }
            let cut = rng.random_range(0..=v.len());
            v.truncate(cut.max(v.len() / 2));
            v
        }
    }
}

fn fuzz_totality() -> Outcome {
    let mut seeds: Vec<Vec<u8>> = dex_fixtures().into_iter().map(|f| f.bytes).collect();
    seeds.extend(manifest_fixtures().iter().map(|m| m.axml()));
    seeds.extend(app_corpus().into_iter().map(|a| a.apk));
    let mut rng = ChaCha8Rng::seed_from_u64(0xf022);
    let mut slowest = Duration::ZERO;
    let mut panics = 0;
    let mut accepted = 0;
    for _ in 0..10_000 {
        let input = fuzz_input(&mut rng, &seeds);
        let started = Instant::now();
        let result = catch_unwind(|| {
            let mut ok = 0;
            ok += usize::from(open_apk(&input).is_ok());
            ok += usize::from(parse_manifest(&input).is_ok());
            if let Ok(dex) = parse_dex(&input) {
                ok += 1;
                let _ = opcode_trace(&dex);
            }
            ok
        });
        slowest = slowest.max(started.elapsed());
        match result {
            Ok(n) => accepted += n,
            Err(_) => panics += 1,
        }
    }
    ensure!(panics == 0, "{panics} inputs panicked");
    ensure!(slowest < Duration::from_secs(1), "slowest input took {slowest:?}");
    Ok(format!("10000 inputs, 0 panics, {accepted} parses succeeded, slowest {slowest:?}"))
}

fn run_pipeline(dir: &Path) -> (BTreeMap<String, Vec<u8>>, Vec<String>) {
    let c = Consortium::new(5);
    let scenario = SimNetConfig {
        seed: 42,
        drop_probability: 0.15,
        max_delay_ticks: 4,
        faulty_engines: vec![FaultyEngine {
            engine_id: "de-05".into(),
            behavior: FaultBehavior::FlipVerdict,
        }],
        engines: None,
    };
    let cfg = write_deployment(dir, &c, &fixture_engines(&c), &scenario);
    let dep = Deployment::load(&cfg).unwrap();
    let mut verdicts = Vec::new();
    for (i, app) in app_corpus().into_iter().enumerate() {
        let t = 1_000 * i as u64;
        let v = AppVersion::new(app.app_id, app.version_code);
        let inputs = DynamicInputs {
            trace: app.trace.as_deref(),
            samples: app.samples.as_deref(),
        };
        ingest(&dep, &app.apk, inputs, t).unwrap();
        scan(&dep, &v, t + 1).unwrap();
        let d = decide(&dep, &v, &scenario, t + 2).unwrap();
        let transcript = d.round.map(|r| r.transcript_jsonl()).unwrap_or_default();
        verdicts.push(serde_json::to_string(&d.verdict).unwrap() + &transcript);
    }
    (snapshot_dir(dep.store.root()), verdicts)
}

fn determinism() -> Outcome {
    let runs: Vec<_> = (0..3)
        .map(|_| {
            let dir = TempDir::new().unwrap();
            run_pipeline(dir.path())
        })
        .collect();
    for (i, run) in runs.iter().enumerate().skip(1) {
        ensure!(run.0 == runs[0].0, "run {} store differs from run 1", i + 1);
        ensure!(run.1 == runs[0].1, "run {} verdicts differ from run 1", i + 1);
    }
    let bytes: usize = runs[0].0.values().map(Vec::len).sum();
    Ok(format!(
        "3 runs, {} files / {bytes} bytes identical, {} verdicts identical",
        runs[0].0.len(),
        runs[0].1.len()
    ))
}

fn logistic_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1091);
    let app = AppVersion::new("app.logit", 1);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let dims = rng.random_range(1..=16);
        let mut values = BTreeMap::new();
        let mut weights = BTreeMap::new();
        let mut pairs = Vec::new();
        for d in 0..dims {
            let (w, x) = (rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0));
            values.insert(format!("m{d}"), x);
            weights.insert(format!("res:m{d}"), w);
            pairs.push((w, x));
        }
        let bias = rng.random_range(-1.0..1.0);
        weights.insert("__bias".to_string(), bias);
        let cfg = EngineConfig::heuristic("de-01", weights);
        let payload = FeaturePayload::Resources(ResourceFeature {
            app_id: app.app_id.clone(),
            version_code: 1,
            values,
        });
        let v = assemble_from_payloads(&[payload], &cfg.schema()).map_err(|e| e.to_string())?;
        let got = heuristic_score(&app, &v, &cfg, vec![]).map_err(|e| e.to_string())?.malice_score;
        let z: f64 = pairs.iter().map(|(w, x)| w * x).sum::<f64>() + bias;
        let expected = 1.0 / (1.0 + (-z).exp());
        let err = (got - expected).abs();
        worst = worst.max(err);
        ensure!(err <= 1e-9, "case {case}: {got} vs {expected}");
    }
    Ok(format!("50 cases, max abs error {worst:e}"))
}

/// Independent statement of who may write what.
fn expected_permission(role: Role, kind: ChainKind, action: Action) -> bool {
    match (action, role, kind) {
        (Action::Read, _, _) => true,
        (Action::Append, Role::FeatureExtractor, ChainKind::Dipb) => true,
        (Action::Append, Role::DetectionEngine, ChainKind::Depb | ChainKind::Cb) => true,
        _ => false,
    }
}

fn role_matrix() -> Outcome {
    let c = Consortium::new(4);
    let dir = TempDir::new().unwrap();
    let store = ChainStore::new(dir.path());
    let app = "app.roles";
    let representative = |role: Role| c.registry.with_role(role).next().unwrap().clone();

    let mut dipb = Chain::new(app, ChainKind::Dipb);
    let fe = representative(Role::FeatureExtractor);
    dipb.append(&json!({"seed": 0}), &fe, c.keys.key_for(&fe).unwrap(), 0).unwrap();
    let mut depb = Chain::new(app, ChainKind::Depb);
    let de = representative(Role::DetectionEngine);
    depb.append(&json!({"seed": 0}), &de, c.keys.key_for(&de).unwrap(), 0).unwrap();
    store.save(&dipb).unwrap();
    store.save(&depb).unwrap();
    store.save(&Chain::new(app, ChainKind::Cb)).unwrap();

    let mut checked = 0;
    for role in Role::ALL {
        let who = representative(role);
        let key = c.keys.key_for(&who).unwrap();
        for kind in ChainKind::ALL {
            for action in [Action::Append, Action::Read] {
                let expected = expected_permission(role, kind, action);
                ensure!(authorize(role, kind, action) == expected, "authorize({role:?}, {kind}, {action:?})");
                let path = store.chain_path(app, kind).unwrap();
                let before = fs::read(&path).unwrap();
                match action {
                    Action::Read => {
                        let chain = store.load(app, kind).unwrap().unwrap();
                        ensure!(chain.get_blocks(None).len() == chain.len(), "read {kind}");
                    }
                    Action::Append => {
                        let mut chain = store.load(app, kind).unwrap().unwrap();
                        let payload = json!({"by": who.id});
                        let result = if kind == ChainKind::Cb {
                            // Consortium blocks carry the author's and every engine's signature.
                            let mut block = chain.prepare(&payload, &who.id, 1).unwrap();
                            let digest = block.digest().unwrap();
                            let mut signers: Vec<_> = vec![who.clone()];
                            signers.extend(c.registry.with_role(Role::DetectionEngine).filter(|p| p.id != who.id).cloned());
                            block.signatures = signers
                                .iter()
                                .map(|p| BlockSignature {
                                    signer: p.id.clone(),
                                    signature: c.keys.key_for(p).unwrap().sign(&digest.0),
                                })
                                .collect();
                            chain.append_signed(block, &c.registry, None).map(|_| ())
                        } else {
                            chain.append(&payload, &who, key, 1).map(|_| ())
                        };
                        match (&result, expected) {
                            (Ok(()), true) => {
                                store.save(&chain).unwrap();
                                ensure!(fs::read(&path).unwrap() != before, "{role:?} append to {kind} not persisted");
                            }
                            (Err(LedgerError::Unauthorized { .. }), false) => {}
                            (r, e) => return Err(format!("{role:?} append to {kind}: {r:?}, expected allowed={e}")),
                        }
                    }
                }
                if !(action == Action::Append && expected) {
                    ensure!(fs::read(&path).unwrap() == before, "{role:?} {action:?} {kind} changed the file");
                }
                checked += 1;
            }
        }
    }
    ensure!(checked == 24, "{checked} combinations");
    ensure!(verify_store(store.root(), &c.registry).unwrap().valid, "store invalid afterwards");
    Ok("24/24 combinations match; rejected appends left files byte-identical".into())
}

/// Standalone export checker over raw JSON, the registry file and the
/// primitives only.
fn check_export(bytes: &[u8], registry_json: &[u8]) -> Result<usize, String> {
    fn lower_hex<const N: usize>(v: &Value) -> Result<[u8; N], String> {
        let s = v.as_str().ok_or("hex field is not a string")?;
        if s.len() != 2 * N || !s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            return Err(format!("bad hex {s:?}"));
        }
        let mut out = [0u8; N];
        hex::decode_to_slice(s, &mut out).map_err(|e| e.to_string())?;
        Ok(out)
    }
    fn keys(v: &Value) -> Vec<&str> {
        v.as_object().map(|m| m.keys().map(String::as_str).collect()).unwrap_or_default()
    }
    fn sha(v: &Value) -> [u8; 32] {
        Sha256::digest(serde_json::to_vec(v).unwrap()).into()
    }

    let registry: Value = serde_json::from_slice(registry_json).map_err(|e| e.to_string())?;
    let participants: BTreeMap<&str, (&str, [u8; 32])> = registry
        .as_array()
        .ok_or("registry is not a list")?
        .iter()
        .map(|p| {
            let key = lower_hex::<32>(&p["public_key"])?;
            Ok((p["id"].as_str().unwrap_or(""), (p["role"].as_str().unwrap_or(""), key)))
        })
        .collect::<Result<_, String>>()?;

    let body = bytes.strip_suffix(b"\n").ok_or("missing trailing newline")?;
    let doc: Value = serde_json::from_slice(body).map_err(|e| e.to_string())?;
    if serde_json::to_vec(&doc).unwrap() != body {
        return Err("not canonical".into());
    }
    if keys(&doc) != ["app_id", "blocks", "chain_kind", "version_code"] || doc["chain_kind"] != "DIPB" {
        return Err("bad envelope".into());
    }
    let version = doc["version_code"].as_u64().ok_or("bad version")?;
    let mut prev = [0u8; 32];
    let mut payloads = 0;
    for (h, block) in doc["blocks"].as_array().ok_or("blocks")?.iter().enumerate() {
        let k = keys(block);
        if k != ["digest", "header", "payload", "signatures"] && k != ["digest", "header", "signatures"] {
            return Err(format!("block {h}: fields {k:?}"));
        }
        let header = &block["header"];
        if keys(header) != ["app_id", "author_id", "chain_kind", "height", "payload_hash", "prev_hash", "timestamp"] {
            return Err(format!("block {h}: header fields"));
        }
        if header["height"].as_u64() != Some(h as u64)
            || header["app_id"] != doc["app_id"]
            || header["chain_kind"] != "DIPB"
            || lower_hex::<32>(&header["prev_hash"])? != prev
        {
            return Err(format!("block {h}: link"));
        }
        let digest = sha(header);
        if lower_hex::<32>(&block["digest"])? != digest {
            return Err(format!("block {h}: digest"));
        }
        if let Some(payload) = block.get("payload") {
            if lower_hex::<32>(&header["payload_hash"])? != sha(payload) || payload["version_code"] != version {
                return Err(format!("block {h}: payload"));
            }
            payloads += 1;
        }
        let sigs = block["signatures"].as_array().ok_or("signatures")?;
        let author = header["author_id"].as_str().ok_or("author")?;
        let [sig] = sigs.as_slice() else {
            return Err(format!("block {h}: signature count"));
        };
        if keys(sig) != ["signature", "signer"] || sig["signer"] != author {
            return Err(format!("block {h}: signer"));
        }
        let (role, public) = participants.get(author).ok_or(format!("block {h}: unknown author"))?;
        if *role != "FeatureExtractor" {
            return Err(format!("block {h}: author role {role}"));
        }
        let vk = VerifyingKey::from_bytes(public).map_err(|e| e.to_string())?;
        let signature = Signature::from_bytes(&lower_hex::<64>(&sig["signature"])?);
        vk.verify_strict(&digest, &signature).map_err(|_| format!("block {h}: signature"))?;
        prev = digest;
    }
    if payloads == 0 {
        return Err("no payloads".into());
    }
    Ok(payloads)
}

fn export_verifiability() -> Outcome {
    let dir = TempDir::new().unwrap();
    let c = Consortium::new(3);
    let cfg = write_deployment(dir.path(), &c, &fixture_engines(&c), &SimNetConfig::reliable(1));
    let dep = Deployment::load(&cfg).unwrap();
    for app in [fixtures::app_notes(1), fixtures::app_notes(2)] {
        ingest(&dep, &app.apk, DynamicInputs::default(), 5).unwrap();
    }
    let out = dir.path().join("export.json");
    export_features(&dep.store, &AppVersion::new("com.example.notes", 1), &out).unwrap();
    let bytes = fs::read(&out).unwrap();
    let registry_json = fs::read(dir.path().join("registry.json")).unwrap();
    let registry = Registry::load(&dir.path().join("registry.json")).unwrap();

    let payloads = check_export(&bytes, &registry_json).map_err(|e| format!("intact export rejected: {e}"))?;
    verify_export(&bytes, &registry).map_err(|e| format!("intact export rejected by library: {e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xe4b0);
    let mut mutations = 0;
    for at in 0..bytes.len() {
        for x in [0x01, rng.random_range(1..=255u8)] {
            let mut m = bytes.clone();
            m[at] ^= x;
            ensure!(check_export(&m, &registry_json).is_err(), "checker accepted flip {x:#04x} at byte {at}");
            ensure!(verify_export(&m, &registry).is_err(), "library accepted flip {x:#04x} at byte {at}");
            mutations += 1;
        }
    }
    Ok(format!(
        "intact export ({} bytes, {payloads} payloads) verifies; all {mutations} single-byte mutations rejected",
        bytes.len()
    ))
}
