//! Detection engines: feature-vector assembly over feature blocks, a digest
//! blacklist engine and a logistic-linear engine, each producing one
//! [`ScoreRecord`] per app version.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{finite, Block, BlockFilter, ChainKind, ChainStore, Digest, LedgerError, StoreError};
use crate::payload::{AppVersion, FeaturePayload};

pub const BIAS_KEY: &str = "__bias";
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Malicious,
    Benign,
}

impl Verdict {
    pub fn inverted(self) -> Verdict {
        match self {
            Verdict::Malicious => Verdict::Benign,
            Verdict::Benign => Verdict::Malicious,
        }
    }

    /// Fail-closed: the threshold itself counts as malicious.
    pub fn from_score(score: f64, threshold: f64) -> Verdict {
        if score >= threshold {
            Verdict::Malicious
        } else {
            Verdict::Benign
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EngineKind {
    Signature,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub engine_id: String,
    pub kind: EngineKind,
    /// Falls back to the deployment threshold when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub weights: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blacklist: Vec<Digest>,
    /// Reported as `family:<tag>` in the detail of malicious records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family_tag: Option<String>,
}

impl EngineConfig {
    pub fn signature(engine_id: impl Into<String>, blacklist: Vec<Digest>) -> EngineConfig {
        EngineConfig {
            engine_id: engine_id.into(),
            kind: EngineKind::Signature,
            threshold: None,
            weights: BTreeMap::new(),
            blacklist,
            family_tag: None,
        }
    }

    pub fn heuristic(engine_id: impl Into<String>, weights: BTreeMap<String, f64>) -> EngineConfig {
        EngineConfig {
            engine_id: engine_id.into(),
            kind: EngineKind::Heuristic,
            threshold: None,
            weights,
            blacklist: Vec::new(),
            family_tag: None,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold.unwrap_or(DEFAULT_THRESHOLD)
    }

    /// Feature keys the heuristic consumes: every weight key except the bias.
    pub fn schema(&self) -> Vec<String> {
        self.weights.keys().filter(|k| *k != BIAS_KEY).cloned().collect()
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidConfig {
            engine_id: self.engine_id.clone(),
            message: msg,
        });
        if self.engine_id.is_empty() {
            return bad("empty engine id".into());
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("threshold {t} outside (0,1)"));
            }
        }
        match self.kind {
            EngineKind::Signature if !self.weights.is_empty() => bad("signature engines take no weights".into()),
            EngineKind::Heuristic if !self.blacklist.is_empty() => bad("heuristic engines take no blacklist".into()),
            EngineKind::Heuristic => {
                for key in self.schema() {
                    parse_key(&key).map_err(|_| EngineError::UnknownFeatureKey(key.clone()))?;
                }
                Ok(())
            }
            EngineKind::Signature => Ok(()),
        }
    }

    fn detail(&self, verdict: Verdict, fallback: String) -> String {
        match (&self.family_tag, verdict) {
            (Some(tag), Verdict::Malicious) => format!("family:{tag}"),
            _ => fallback,
        }
    }
}

/// One engine's malice score for one app version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "score")]
pub struct ScoreRecord {
    pub engine_id: String,
    pub app_id: String,
    pub version_code: u64,
    #[serde(serialize_with = "finite::serialize")]
    pub malice_score: f64,
    pub verdict: Verdict,
    /// Digests of the feature blocks examined.
    pub evidence: Vec<Digest>,
    pub detail: String,
}

impl ScoreRecord {
    pub const KIND: &'static str = "score";

    pub fn app_version(&self) -> AppVersion {
        AppVersion::new(self.app_id.clone(), self.version_code)
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("two {kind} blocks for version {version_code}")]
    ConflictingBlocks { kind: String, version_code: u64 },
    #[error("unrecognized feature key {0:?}")]
    UnknownFeatureKey(String),
    #[error("score is not finite")]
    NonFiniteScore,
    #[error("engine {engine_id}: {message}")]
    InvalidConfig { engine_id: String, message: String },
    #[error("engine {engine_id} is {actual:?}, expected {expected:?}")]
    WrongKind {
        engine_id: String,
        expected: EngineKind,
        actual: EngineKind,
    },
    #[error("no feature chain for app {0:?}")]
    MissingChain(String),
    #[error("no feature blocks for {app_id} version {version_code}")]
    MissingFeatures { app_id: String, version_code: u64 },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Unique keys in ascending order.
    pub entries: Vec<(String, f64)>,
    pub schema_id: String,
}

impl FeatureVector {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries
            .binary_search_by(|(k, _)| k.as_str().cmp(key))
            .ok()
            .map(|i| self.entries[i].1)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum FeatureKey {
    Permission(String),
    Command(String),
    Api(String),
    Opcode(u8),
    Ngram(u32, String),
    Resource(String),
}

fn parse_key(key: &str) -> Result<FeatureKey, ()> {
    let (prefix, rest) = key.split_once(':').ok_or(())?;
    if rest.is_empty() {
        return Err(());
    }
    Ok(match prefix {
        "perm" => FeatureKey::Permission(rest.to_string()),
        "cmd" => FeatureKey::Command(rest.to_string()),
        "api" => FeatureKey::Api(rest.to_string()),
        "op" if rest.len() == 2 && rest.bytes().all(|b| b.is_ascii_hexdigit()) => FeatureKey::Opcode(u8::from_str_radix(rest, 16).map_err(|_| ())?),
        "res" => FeatureKey::Resource(rest.to_string()),
        p => {
            let n: u32 = p.strip_prefix("sys").ok_or(())?.parse().map_err(|_| ())?;
            if n == 0 {
                return Err(());
            }
            FeatureKey::Ngram(n, rest.to_string())
        }
    })
}

fn schema_id(keys: &[String]) -> String {
    let joined = keys.join("\n");
    Digest::of(joined.as_bytes()).to_hex()[..16].to_string()
}

/// Builds the vector for `schema` from one version's feature payloads.
/// Absent features read as 0.
pub fn assemble_from_payloads(payloads: &[FeaturePayload], schema: &[String]) -> Result<FeatureVector, EngineError> {
    let mut seen = BTreeSet::new();
    for p in payloads {
        let kind = match p {
            FeaturePayload::SyscallNgrams(f) => format!("syscall_ngrams/{}", f.n),
            other => other.kind().to_string(),
        };
        let version_code = p.app_version().version_code;
        if !seen.insert((kind.clone(), version_code)) {
            return Err(EngineError::ConflictingBlocks { kind, version_code });
        }
    }

    let mut keys: Vec<String> = schema.to_vec();
    keys.sort();
    keys.dedup();
    let mut entries = Vec::with_capacity(keys.len());
    for key in &keys {
        let parsed = parse_key(key).map_err(|_| EngineError::UnknownFeatureKey(key.clone()))?;
        entries.push((key.clone(), lookup(&parsed, payloads)));
    }
    Ok(FeatureVector {
        schema_id: schema_id(&keys),
        entries,
    })
}

fn lookup(key: &FeatureKey, payloads: &[FeaturePayload]) -> f64 {
    for p in payloads {
        let v = match (key, p) {
            (FeatureKey::Permission(name), FeaturePayload::Permissions(f)) => {
                let suffix = format!(".{name}");
                Some(if f.permissions.iter().any(|p| p == name || p.ends_with(&suffix)) {
                    1.0
                } else {
                    0.0
                })
            }
            (FeatureKey::Command(c), FeaturePayload::Commands(f)) => {
                Some(f.hits.iter().filter(|h| &h.command == c).map(|h| h.count as f64).sum())
            }
            (FeatureKey::Api(a), FeaturePayload::ApiCalls(f)) => Some(
                f.hits
                    .iter()
                    .filter(|h| format!("{}->{}", h.class_contains, h.method) == *a)
                    .map(|h| h.count as f64)
                    .sum(),
            ),
            (FeatureKey::Opcode(op), FeaturePayload::Opcodes(f)) => {
                Some(f.opcode_histogram.get(*op as usize).copied().unwrap_or(0) as f64)
            }
            (FeatureKey::Ngram(n, gram), FeaturePayload::SyscallNgrams(f)) if f.n == *n => {
                Some(f.counts.get(gram).copied().unwrap_or(0) as f64)
            }
            (FeatureKey::Resource(r), FeaturePayload::Resources(f)) => Some(f.values.get(r).copied().unwrap_or(0.0)),
            _ => None,
        };
        if let Some(v) = v {
            return v;
        }
    }
    0.0
}

/// Decodes feature blocks and assembles the vector.
pub fn assemble_feature_vector(dipb_blocks: &[&Block], schema: &[String]) -> Result<FeatureVector, EngineError> {
    let payloads = dipb_blocks
        .iter()
        .map(|b| b.decode::<FeaturePayload>())
        .collect::<Result<Vec<_>, _>>()?;
    assemble_from_payloads(&payloads, schema)
}

fn expect_kind(cfg: &EngineConfig, expected: EngineKind) -> Result<(), EngineError> {
    if cfg.kind == expected {
        Ok(())
    } else {
        Err(EngineError::WrongKind {
            engine_id: cfg.engine_id.clone(),
            expected,
            actual: cfg.kind,
        })
    }
}

/// 1.0 when either digest is blacklisted, else 0.0.
pub fn signature_scan(
    app: &AppVersion,
    apk_digest: Option<&Digest>,
    dex_digest: Option<&Digest>,
    cfg: &EngineConfig,
    evidence: Vec<Digest>,
) -> Result<ScoreRecord, EngineError> {
    expect_kind(cfg, EngineKind::Signature)?;
    let hit = [("apk", apk_digest), ("dex", dex_digest)]
        .into_iter()
        .find_map(|(what, d)| d.filter(|d| cfg.blacklist.contains(d)).map(|d| (what, d)));
    let malice_score = if hit.is_some() { 1.0 } else { 0.0 };
    let verdict = Verdict::from_score(malice_score, cfg.threshold());
    let fallback = match hit {
        Some((what, d)) => format!("blacklisted {what} digest {}", &d.to_hex()[..16]),
        None => "no blacklisted digest".to_string(),
    };
    Ok(ScoreRecord {
        engine_id: cfg.engine_id.clone(),
        app_id: app.app_id.clone(),
        version_code: app.version_code,
        malice_score,
        verdict,
        evidence,
        detail: cfg.detail(verdict, fallback),
    })
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `logistic(w·v + bias)`. Keys without a weight contribute nothing.
pub fn heuristic_score(
    app: &AppVersion,
    v: &FeatureVector,
    cfg: &EngineConfig,
    evidence: Vec<Digest>,
) -> Result<ScoreRecord, EngineError> {
    expect_kind(cfg, EngineKind::Heuristic)?;
    let bias = cfg.weights.get(BIAS_KEY).copied().unwrap_or(0.0);
    let z = v
        .entries
        .iter()
        .map(|(k, x)| cfg.weights.get(k).copied().unwrap_or(0.0) * x)
        .sum::<f64>()
        + bias;
    if !z.is_finite() {
        return Err(EngineError::NonFiniteScore);
    }
    let malice_score = logistic(z);
    let verdict = Verdict::from_score(malice_score, cfg.threshold());
    Ok(ScoreRecord {
        engine_id: cfg.engine_id.clone(),
        app_id: app.app_id.clone(),
        version_code: app.version_code,
        malice_score,
        verdict,
        evidence,
        detail: cfg.detail(verdict, format!("logit {z}")),
    })
}

/// Scores one app version from its feature chain. Read-only.
pub fn run_engine(cfg: &EngineConfig, store: &ChainStore, app: &AppVersion) -> Result<ScoreRecord, EngineError> {
    let chain = store
        .load(&app.app_id, ChainKind::Dipb)?
        .ok_or_else(|| EngineError::MissingChain(app.app_id.clone()))?;
    let blocks = chain.get_blocks(Some(&BlockFilter::version(app.version_code)));
    let mut payloads = Vec::with_capacity(blocks.len());
    let mut digests = Vec::with_capacity(blocks.len());
    for block in &blocks {
        let Some(kind) = block.payload_kind() else { continue };
        if !FeaturePayload::KINDS.contains(&kind) {
            continue;
        }
        payloads.push(block.decode::<FeaturePayload>()?);
        digests.push(block.digest().map_err(LedgerError::from)?);
    }
    if payloads.is_empty() {
        return Err(EngineError::MissingFeatures {
            app_id: app.app_id.clone(),
            version_code: app.version_code,
        });
    }

    match cfg.kind {
        EngineKind::Signature => {
            let apk = payloads.iter().find_map(FeaturePayload::apk_sha256);
            let dex = payloads.iter().find_map(FeaturePayload::dex_sha256);
            let consulted: Vec<Digest> = payloads
                .iter()
                .zip(&digests)
                .filter(|(p, _)| p.apk_sha256().is_some() || p.dex_sha256().is_some())
                .map(|(_, d)| *d)
                .collect();
            let evidence = if consulted.is_empty() { digests } else { consulted };
            signature_scan(app, apk.as_ref(), dex.as_ref(), cfg, evidence)
        }
        EngineKind::Heuristic => {
            let v = assemble_from_payloads(&payloads, &cfg.schema())?;
            heuristic_score(app, &v, cfg, digests)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payload::{CommandFeature, CommandHit, PermissionFeature};
    use proptest::prelude::*;

    fn app() -> AppVersion {
        AppVersion::new("com.example", 1)
    }

    fn perms(list: &[&str]) -> FeaturePayload {
        FeaturePayload::Permissions(PermissionFeature {
            app_id: "com.example".into(),
            version_code: 1,
            permissions: list.iter().map(|s| s.to_string()).collect(),
            apk_sha256: None,
        })
    }

    fn keys(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn permission_indicators() {
        let v = assemble_from_payloads(
            &[perms(&["android.permission.SEND_SMS"])],
            &keys(&["perm:SEND_SMS", "perm:INTERNET"]),
        )
        .unwrap();
        assert_eq!(v.get("perm:SEND_SMS"), Some(1.0));
        assert_eq!(v.get("perm:INTERNET"), Some(0.0));
        assert_eq!(v.entries[0].0, "perm:INTERNET");
    }

    #[test]
    fn empty_input_is_all_zero() {
        let v = assemble_from_payloads(&[], &keys(&["perm:X", "op:12", "sys2:a|b", "res:cpu.mean"])).unwrap();
        assert!(v.entries.iter().all(|(_, x)| *x == 0.0));
        assert_eq!(v.entries.len(), 4);
    }

    #[test]
    fn command_counts() {
        let cmd = FeaturePayload::Commands(CommandFeature {
            app_id: "com.example".into(),
            version_code: 1,
            hits: vec![CommandHit {
                command: "chmod".into(),
                count: 2,
            }],
            apk_sha256: None,
            dex_sha256: None,
        });
        let v = assemble_from_payloads(&[cmd], &keys(&["cmd:chmod"])).unwrap();
        assert_eq!(v.entries, [("cmd:chmod".to_string(), 2.0)]);
    }

    #[test]
    fn conflicting_blocks() {
        let err = assemble_from_payloads(&[perms(&[]), perms(&["A"])], &[]).unwrap_err();
        assert!(matches!(err, EngineError::ConflictingBlocks { version_code: 1, .. }));
    }

    #[test]
    fn unknown_keys_rejected() {
        for bad in ["perm", "perm:", "op:1", "op:zz", "sys0:a", "foo:bar", "sysx:a"] {
            assert!(matches!(
                assemble_from_payloads(&[], &keys(&[bad])),
                Err(EngineError::UnknownFeatureKey(_))
            ), "{bad}");
        }
    }

    #[test]
    fn signature_rules() {
        let bad = Digest::of(b"bad");
        let clean = Digest::of(b"clean");
        let cfg = EngineConfig::signature("sig", vec![bad]);
        let r = signature_scan(&app(), Some(&bad), Some(&clean), &cfg, vec![]).unwrap();
        assert_eq!((r.malice_score, r.verdict), (1.0, Verdict::Malicious));
        let r = signature_scan(&app(), Some(&clean), Some(&bad), &cfg, vec![]).unwrap();
        assert_eq!(r.malice_score, 1.0);
        let empty = EngineConfig::signature("sig", vec![]);
        let r = signature_scan(&app(), Some(&bad), None, &empty, vec![]).unwrap();
        assert_eq!((r.malice_score, r.verdict), (0.0, Verdict::Benign));
        let mut tagged = cfg.clone();
        tagged.family_tag = Some("smsfraud".into());
        assert_eq!(signature_scan(&app(), Some(&bad), None, &tagged, vec![]).unwrap().detail, "family:smsfraud");
    }

    #[test]
    fn logistic_examples() {
        let zero = EngineConfig::heuristic("h", BTreeMap::new());
        let v = assemble_from_payloads(&[], &[]).unwrap();
        let r = heuristic_score(&app(), &v, &zero, vec![]).unwrap();
        assert_eq!(r.malice_score, 0.5);
        assert_eq!(r.verdict, Verdict::Malicious);

        let weights = BTreeMap::from([("perm:SEND_SMS".to_string(), 2.0), (BIAS_KEY.to_string(), -1.0)]);
        let cfg = EngineConfig::heuristic("h", weights);
        let v = assemble_from_payloads(&[perms(&["android.permission.SEND_SMS"])], &cfg.schema()).unwrap();
        let r = heuristic_score(&app(), &v, &cfg, vec![]).unwrap();
        assert!((r.malice_score - 0.7310585786300049).abs() < 1e-9);
    }

    #[test]
    fn non_finite_score() {
        let cfg = EngineConfig::heuristic("h", BTreeMap::from([("op:12".to_string(), f64::INFINITY), (BIAS_KEY.to_string(), f64::NEG_INFINITY)]));
        let v = assemble_from_payloads(&[], &cfg.schema()).unwrap();
        assert!(matches!(heuristic_score(&app(), &v, &cfg, vec![]), Err(EngineError::NonFiniteScore)));
    }

    #[test]
    fn wrong_kind() {
        let cfg = EngineConfig::heuristic("h", BTreeMap::new());
        assert!(matches!(signature_scan(&app(), None, None, &cfg, vec![]), Err(EngineError::WrongKind { .. })));
    }

    #[test]
    fn config_validation() {
        let mut cfg = EngineConfig::heuristic("h", BTreeMap::from([("perm:A".to_string(), 1.0)]));
        assert!(cfg.validate().is_ok());
        cfg.threshold = Some(1.0);
        assert!(cfg.validate().is_err());
        cfg.threshold = Some(0.3);
        cfg.weights.insert("nope".into(), 1.0);
        assert!(cfg.validate().is_err());
        let mut sig = EngineConfig::signature("s", vec![]);
        sig.weights.insert("perm:A".into(), 1.0);
        assert!(sig.validate().is_err());
    }

    #[test]
    fn score_record_is_tagged() {
        let r = ScoreRecord {
            engine_id: "de-1".into(),
            app_id: "a".into(),
            version_code: 2,
            malice_score: 1.0,
            verdict: Verdict::Malicious,
            evidence: vec![Digest::ZERO],
            detail: String::new(),
        };
        let v = crate::ledger::to_value(&r).unwrap();
        assert_eq!(v["kind"], "score");
        assert_eq!(v["verdict"], "Malicious");
        let back: ScoreRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn score_in_unit_interval_and_coherent(
            w in prop::collection::vec(-50.0f64..50.0, 1..8),
            x in prop::collection::vec(0.0f64..100.0, 8),
            bias in -50.0f64..50.0,
            threshold in 0.01f64..0.99,
        ) {
            let mut weights: BTreeMap<String, f64> = w.iter().enumerate().map(|(i, w)| (format!("res:m{i}.mean"), *w)).collect();
            weights.insert(BIAS_KEY.into(), bias);
            let mut cfg = EngineConfig::heuristic("h", weights);
            cfg.threshold = Some(threshold);
            let v = FeatureVector {
                entries: (0..w.len()).map(|i| (format!("res:m{i}.mean"), x[i])).collect(),
                schema_id: String::new(),
            };
            let r = heuristic_score(&app(), &v, &cfg, vec![]).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.malice_score));
            prop_assert_eq!(r.verdict == Verdict::Malicious, r.malice_score >= threshold);
        }

        #[test]
        fn positive_weight_is_monotone(w in 0.0f64..10.0, x in 0.0f64..10.0, dx in 0.0f64..10.0, bias in -10.0f64..10.0) {
            let cfg = EngineConfig::heuristic("h", BTreeMap::from([("op:12".to_string(), w), (BIAS_KEY.to_string(), bias)]));
            let at = |x: f64| {
                let v = FeatureVector { entries: vec![("op:12".into(), x)], schema_id: String::new() };
                heuristic_score(&app(), &v, &cfg, vec![]).unwrap().malice_score
            };
            prop_assert!(at(x + dx) >= at(x));
        }
    }
}
