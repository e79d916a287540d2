//! End-to-end orchestration over a chain store: ingest an APK (and optional
//! runtime traces) into feature blocks, score it with every configured
//! engine, run a consensus round, and let the determinant agent read the
//! verdict back from the consortium chain.

mod config;
mod export;

use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{load_scenario, Deployment, DeploymentConfig, ExtractorIds, STORE_ENV};
pub use export::{build_export, verify_export, ExportError, ExportSummary, ExportedBlock, FeatureExport};

use crate::apk_static::{analyze_apk, StaticError};
use crate::consensus::{
    aggregate_score, latest_scores, run_round, AppChains, ConsensusDecision, ConsensusError, RoundOutcome,
    RoundStatus, SimNetConfig,
};
use crate::dynamic_features::{
    parse_resource_samples, parse_syscall_trace, resource_features, syscall_ngrams, DynamicError,
};
use crate::engines::{run_engine, EngineError, ScoreRecord, Verdict};
use crate::ledger::{
    read_chain_file, verify_chain, Block, Chain, ChainKind, ChainStore, Digest, LedgerError, Registry,
    RegistryError, StoreError, ValidationReason, ValidationReport,
};
use crate::payload::{AppVersion, FeaturePayload};

pub const LOCK_FILE: &str = ".lock";
pub const STORE_REGISTRY: &str = "registry.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Static(#[from] StaticError),
    #[error(transparent)]
    Dynamic(#[from] DynamicError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("{app_id} version {version_code} is already ingested")]
    AlreadyIngested { app_id: String, version_code: u64 },
    #[error("{app_id} version {version_code} was already ingested from different APK bytes")]
    VersionConflict { app_id: String, version_code: u64 },
    #[error("{app_id} version {version_code} is older than current version {current}")]
    VersionRegression {
        app_id: String,
        version_code: u64,
        current: u64,
    },
    #[error("no feature blocks for {app_id} version {version_code}")]
    MissingFeatures { app_id: String, version_code: u64 },
    #[error("no score records for {app_id} version {version_code}")]
    NoScores { app_id: String, version_code: u64 },
    #[error("no feature chain for app {0:?}")]
    MissingChain(String),
    #[error("no consensus scenario given")]
    MissingScenario,
    #[error("store {0} is locked by another invocation")]
    StoreLocked(String),
    #[error("cannot read store {path}: {message}")]
    UnreadableStore { path: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_error(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Advisory exclusive lock on a store, released on drop.
#[derive(Debug)]
pub struct StoreLock {
    path: PathBuf,
}

impl StoreLock {
    pub fn acquire(store: &ChainStore) -> Result<StoreLock, PipelineError> {
        let root = store.root();
        fs::create_dir_all(root).map_err(|e| io_error(root, e))?;
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(StoreLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                Err(PipelineError::StoreLocked(root.display().to_string()))
            }
            Err(e) => Err(io_error(&path, e)),
        }
    }
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Versions seen for one app, derived from its feature chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppRecord {
    pub app_id: String,
    /// In ingestion order (strictly increasing).
    pub versions: Vec<u64>,
    pub current_version: u64,
}

pub fn app_record(dipb: &Chain) -> Option<AppRecord> {
    let mut versions: Vec<u64> = Vec::new();
    for v in dipb.blocks().iter().filter_map(Block::payload_version) {
        if versions.last() != Some(&v) && !versions.contains(&v) {
            versions.push(v);
        }
    }
    let current_version = *versions.iter().max()?;
    Some(AppRecord {
        app_id: dipb.app_id().to_string(),
        versions,
        current_version,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub app_id: String,
    pub version_code: u64,
    pub apk_sha256: Digest,
    pub blocks: Vec<IngestedBlock>,
    pub record: AppRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestedBlock {
    pub kind: String,
    pub height: u64,
    pub digest: Digest,
    pub author_id: String,
}

/// Optional runtime artifacts accompanying an APK.
#[derive(Debug, Clone, Copy, Default)]
pub struct DynamicInputs<'a> {
    pub trace: Option<&'a str>,
    pub samples: Option<&'a str>,
}

/// Runs every extractor and appends one feature block per extractor.
pub fn ingest(
    dep: &Deployment,
    apk: &[u8],
    dynamic: DynamicInputs<'_>,
    timestamp: u64,
) -> Result<IngestReport, PipelineError> {
    let features = analyze_apk(apk, &dep.watchlists)?;
    let app = features.app_version();
    crate::ledger::validate_app_id(&app.app_id)?;

    let mut payloads = vec![
        FeaturePayload::Opcodes(features.opcodes.clone()),
        FeaturePayload::Permissions(features.permissions.clone()),
        FeaturePayload::ApiCalls(features.api_calls.clone()),
        FeaturePayload::Commands(features.commands.clone()),
    ];
    if let Some(text) = dynamic.trace {
        let trace = parse_syscall_trace(text, &app)?;
        payloads.push(FeaturePayload::SyscallNgrams(syscall_ngrams(&trace, dep.ngram_n)?));
    }
    if let Some(text) = dynamic.samples {
        let samples = parse_resource_samples(text, &app)?;
        payloads.push(FeaturePayload::Resources(resource_features(&samples, Some(&dep.resource_schema))?));
    }

    let _lock = StoreLock::acquire(&dep.store)?;
    let mut dipb = dep.store.load_or_new(&app.app_id, ChainKind::Dipb)?;
    if let Some(record) = app_record(&dipb) {
        if record.versions.contains(&app.version_code) {
            let same = dipb
                .get_blocks(None)
                .into_iter()
                .filter(|b| b.payload_version() == Some(app.version_code))
                .filter_map(|b| b.decode::<FeaturePayload>().ok())
                .any(|p| p.apk_sha256() == Some(features.apk_sha256));
            return Err(if same {
                PipelineError::AlreadyIngested {
                    app_id: app.app_id,
                    version_code: app.version_code,
                }
            } else {
                PipelineError::VersionConflict {
                    app_id: app.app_id,
                    version_code: app.version_code,
                }
            });
        }
        if app.version_code < record.current_version {
            return Err(PipelineError::VersionRegression {
                app_id: app.app_id,
                version_code: app.version_code,
                current: record.current_version,
            });
        }
    }

    let mut blocks = Vec::with_capacity(payloads.len());
    for payload in &payloads {
        let fe_id = dep
            .extractors
            .for_kind(payload.kind())
            .expect("every payload kind has an extractor");
        let author = dep
            .registry
            .get(fe_id)
            .ok_or_else(|| LedgerError::UnknownParticipant(fe_id.to_string()))?;
        let key = dep.keys.key_for(author)?;
        let block = dipb.append_record(payload, author, key, timestamp)?;
        blocks.push(IngestedBlock {
            kind: payload.kind().to_string(),
            height: block.header.height,
            digest: block.digest().map_err(LedgerError::from)?,
            author_id: author.id.clone(),
        });
    }
    dep.store.save(&dipb)?;
    let registry_copy = dep.store.root().join(STORE_REGISTRY);
    dep.registry.save(&registry_copy)?;

    Ok(IngestReport {
        record: app_record(&dipb).expect("just appended"),
        app_id: app.app_id,
        version_code: app.version_code,
        apk_sha256: features.apk_sha256,
        blocks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredBlock {
    pub engine_id: String,
    pub height: u64,
    pub digest: Digest,
    pub malice_score: f64,
    pub verdict: Verdict,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EngineFailure {
    pub engine_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub app_id: String,
    pub version_code: u64,
    pub appended: Vec<ScoredBlock>,
    pub errors: Vec<EngineFailure>,
}

/// Runs every configured engine; each success appends one score block.
/// Engine failures are collected, not fatal.
pub fn scan(dep: &Deployment, app: &AppVersion, timestamp: u64) -> Result<ScanReport, PipelineError> {
    let _lock = StoreLock::acquire(&dep.store)?;
    let dipb = dep
        .store
        .load(&app.app_id, ChainKind::Dipb)?
        .ok_or_else(|| PipelineError::MissingFeatures {
            app_id: app.app_id.clone(),
            version_code: app.version_code,
        })?;
    if dipb.get_blocks(Some(&crate::ledger::BlockFilter::version(app.version_code))).is_empty() {
        return Err(PipelineError::MissingFeatures {
            app_id: app.app_id.clone(),
            version_code: app.version_code,
        });
    }

    let mut depb = dep.store.load_or_new(&app.app_id, ChainKind::Depb)?;
    let mut report = ScanReport {
        app_id: app.app_id.clone(),
        version_code: app.version_code,
        appended: Vec::new(),
        errors: Vec::new(),
    };
    for engine in &dep.engines {
        let result = run_engine(engine, &dep.store, app).map_err(PipelineError::from).and_then(|record| {
            let author = dep
                .registry
                .get(&engine.engine_id)
                .ok_or_else(|| LedgerError::UnknownParticipant(engine.engine_id.clone()))?;
            let key = dep.keys.key_for(author)?;
            let block = depb.append_record(&record, author, key, timestamp)?;
            Ok(ScoredBlock {
                engine_id: record.engine_id.clone(),
                height: block.header.height,
                digest: block.digest().map_err(LedgerError::from)?,
                malice_score: record.malice_score,
                verdict: record.verdict,
                detail: record.detail.clone(),
            })
        });
        match result {
            Ok(scored) => report.appended.push(scored),
            Err(e) => report.errors.push(EngineFailure {
                engine_id: engine.engine_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    if !report.appended.is_empty() {
        dep.store.save(&depb)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalClass {
    Malicious,
    Benign,
    Undecided,
}

impl From<Verdict> for FinalClass {
    fn from(v: Verdict) -> FinalClass {
        match v {
            Verdict::Malicious => FinalClass::Malicious,
            Verdict::Benign => FinalClass::Benign,
        }
    }
}

/// Determinant agent output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalVerdict {
    pub app_id: String,
    pub version_code: u64,
    pub verdict: FinalClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate_score: Option<f64>,
    pub endorsing_engines: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family_tag: Option<String>,
}

impl FinalVerdict {
    pub fn undecided(app: &AppVersion) -> FinalVerdict {
        FinalVerdict {
            app_id: app.app_id.clone(),
            version_code: app.version_code,
            verdict: FinalClass::Undecided,
            aggregate_score: None,
            endorsing_engines: Vec::new(),
            family_tag: None,
        }
    }
}

/// Reads a verdict from one consortium block, using nothing else.
pub fn verdict_from_block(block: &Block) -> Option<FinalVerdict> {
    if block.payload_kind() != Some(ConsensusDecision::KIND) {
        return None;
    }
    let decision: ConsensusDecision = block.decode().ok()?;
    let mut endorsing: Vec<String> = block.signers().map(str::to_string).collect();
    endorsing.sort();
    let aggregate = aggregate_score(&decision, endorsing.iter().map(String::as_str))?;
    let family_tag = decision
        .engine_scores
        .iter()
        .filter(|s| endorsing.contains(&s.engine_id))
        .find_map(|s| s.detail.strip_prefix("family:").map(str::to_string));
    Some(FinalVerdict {
        app_id: decision.app_id,
        version_code: decision.version_code,
        verdict: decision.proposed_verdict.into(),
        aggregate_score: Some(aggregate),
        endorsing_engines: endorsing,
        family_tag,
    })
}

/// Latest committed verdict for a version on a consortium chain.
pub fn committed_verdict(cb: &Chain, version_code: u64) -> Option<FinalVerdict> {
    cb.blocks()
        .iter()
        .rev()
        .filter(|b| b.payload_version() == Some(version_code))
        .find_map(verdict_from_block)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecideReport {
    pub verdict: FinalVerdict,
    /// `None` when a committed block already existed.
    pub round: Option<RoundOutcome>,
}

/// Runs a consensus round unless the version already has a committed
/// decision, then reads the verdict back from the consortium chain.
pub fn decide(
    dep: &Deployment,
    app: &AppVersion,
    scenario: &SimNetConfig,
    timestamp: u64,
) -> Result<DecideReport, PipelineError> {
    let _lock = StoreLock::acquire(&dep.store)?;
    let mut chains = AppChains::load(&dep.store, &app.app_id)?;
    if latest_scores(&chains.depb, app.version_code).is_empty() {
        return Err(PipelineError::NoScores {
            app_id: app.app_id.clone(),
            version_code: app.version_code,
        });
    }
    if let Some(verdict) = committed_verdict(&chains.cb, app.version_code) {
        return Ok(DecideReport { verdict, round: None });
    }
    let outcome = run_round(scenario, &dep.registry, &dep.keys, &mut chains, app.version_code, timestamp)?;
    let verdict = match outcome.status {
        RoundStatus::Committed => {
            dep.store.save(&chains.cb)?;
            committed_verdict(&chains.cb, app.version_code).expect("round just committed a decision")
        }
        RoundStatus::Failed => FinalVerdict::undecided(app),
    };
    Ok(DecideReport {
        verdict,
        round: Some(outcome),
    })
}

/// Writes the third-party export for one version.
pub fn export_features(
    store: &ChainStore,
    app: &AppVersion,
    out: &Path,
) -> Result<FeatureExport, PipelineError> {
    let dipb = store
        .load(&app.app_id, ChainKind::Dipb)?
        .ok_or_else(|| PipelineError::MissingChain(app.app_id.clone()))?;
    let export = build_export(&dipb, app.version_code).ok_or_else(|| PipelineError::MissingFeatures {
        app_id: app.app_id.clone(),
        version_code: app.version_code,
    })?;
    fs::write(out, export.to_bytes()).map_err(|e| io_error(out, e))?;
    Ok(export)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainAudit {
    pub app_id: String,
    pub chain_kind: ChainKind,
    pub path: String,
    pub blocks: usize,
    pub report: ValidationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoreReport {
    pub valid: bool,
    pub chains: Vec<ChainAudit>,
}

/// Audits every chain file in the store.
pub fn verify_store(store_path: &Path, registry: &Registry) -> Result<StoreReport, PipelineError> {
    let unreadable = |message: String| PipelineError::UnreadableStore {
        path: store_path.display().to_string(),
        message,
    };
    if !store_path.is_dir() {
        return Err(unreadable("not a directory".into()));
    }
    let store = ChainStore::new(store_path);
    let mut chains = Vec::new();
    for (app_id, kind, path) in store.list_chains().map_err(|e| unreadable(e.to_string()))? {
        let file = read_chain_file(&path, &app_id, kind).map_err(|e| unreadable(e.to_string()))?;
        let blocks = file.blocks.len();
        let malformed_at = file.malformed_at;
        let chain = Chain::from_blocks(app_id.clone(), kind, file.blocks);
        let mut report = verify_chain(&chain, registry, None);
        if report.valid {
            if let Some(line) = malformed_at {
                report = ValidationReport::failed(line as u64, ValidationReason::MalformedBlock);
            }
        }
        chains.push(ChainAudit {
            app_id,
            chain_kind: kind,
            path: path.display().to_string(),
            blocks,
            report,
        });
    }
    Ok(StoreReport {
        valid: chains.iter().all(|c| c.report.valid),
        chains,
    })
}

/// Loads the registry a store was written with.
pub fn store_registry(store_path: &Path) -> Result<Registry, PipelineError> {
    Ok(Registry::load(&store_path.join(STORE_REGISTRY))?)
}

/// Convenience for callers holding only a scenario path.
pub fn scenario_for(dep: &Deployment, path: Option<&Path>) -> Result<SimNetConfig, PipelineError> {
    match path {
        Some(p) => load_scenario(p),
        None => dep.scenario.clone().ok_or(PipelineError::MissingScenario),
    }
}

/// Score records for one version, in chain order.
pub fn score_records(depb: &Chain, version_code: u64) -> Vec<ScoreRecord> {
    depb.blocks()
        .iter()
        .filter(|b| b.payload_kind() == Some(ScoreRecord::KIND) && b.payload_version() == Some(version_code))
        .filter_map(|b| b.decode().ok())
        .collect()
}
