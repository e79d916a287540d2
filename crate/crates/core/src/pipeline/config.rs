use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::apk_static::Watchlists;
use crate::consensus::SimNetConfig;
use crate::dynamic_features::{default_resource_schema, DEFAULT_NGRAM_N, MAX_NGRAM_N};
use crate::engines::{EngineConfig, DEFAULT_THRESHOLD};
use crate::ledger::{ChainStore, KeyRing, Registry};

pub const STORE_ENV: &str = "B2MDF_STORE";

/// Participant ids of the six feature extractors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorIds {
    #[serde(default = "ExtractorIds::opcodes")]
    pub opcodes: String,
    #[serde(default = "ExtractorIds::permissions")]
    pub permissions: String,
    #[serde(default = "ExtractorIds::api_calls")]
    pub api_calls: String,
    #[serde(default = "ExtractorIds::commands")]
    pub commands: String,
    #[serde(default = "ExtractorIds::syscall_ngrams")]
    pub syscall_ngrams: String,
    #[serde(default = "ExtractorIds::resources")]
    pub resources: String,
}

impl ExtractorIds {
    fn opcodes() -> String {
        "fe-opcodes".into()
    }
    fn permissions() -> String {
        "fe-permissions".into()
    }
    fn api_calls() -> String {
        "fe-api".into()
    }
    fn commands() -> String {
        "fe-commands".into()
    }
    fn syscall_ngrams() -> String {
        "fe-syscalls".into()
    }
    fn resources() -> String {
        "fe-resources".into()
    }

    /// Extractor id for a feature payload kind.
    pub fn for_kind(&self, kind: &str) -> Option<&str> {
        Some(match kind {
            "opcodes" => &self.opcodes,
            "permissions" => &self.permissions,
            "api_calls" => &self.api_calls,
            "commands" => &self.commands,
            "syscall_ngrams" => &self.syscall_ngrams,
            "resources" => &self.resources,
            _ => return None,
        })
    }
}

impl Default for ExtractorIds {
    fn default() -> Self {
        ExtractorIds {
            opcodes: Self::opcodes(),
            permissions: Self::permissions(),
            api_calls: Self::api_calls(),
            commands: Self::commands(),
            syscall_ngrams: Self::syscall_ngrams(),
            resources: Self::resources(),
        }
    }
}

/// The deployment JSON document. Relative paths resolve against the
/// directory holding the document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentConfig {
    pub store_path: PathBuf,
    pub registry_path: PathBuf,
    pub keys_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub watchlist_path: Option<PathBuf>,
    #[serde(default = "default_ngram_n")]
    pub ngram_n: u32,
    #[serde(default = "default_resource_schema")]
    pub resource_schema: Vec<String>,
    #[serde(default)]
    pub engines: Vec<EngineConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_path: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub determinant_threshold: f64,
    #[serde(default)]
    pub extractors: ExtractorIds,
}

fn default_ngram_n() -> u32 {
    DEFAULT_NGRAM_N
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

/// A loaded, validated deployment.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub store: ChainStore,
    pub registry: Registry,
    pub keys: KeyRing,
    pub watchlists: Watchlists,
    pub ngram_n: u32,
    pub resource_schema: Vec<String>,
    /// Thresholds already defaulted to the determinant threshold.
    pub engines: Vec<EngineConfig>,
    pub scenario: Option<SimNetConfig>,
    pub threshold: f64,
    pub extractors: ExtractorIds,
}

fn config_err(path: &Path, message: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(format!("{}: {message}", path.display()))
}

pub fn load_scenario(path: &Path) -> Result<SimNetConfig, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| config_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| config_err(path, e))
}

impl DeploymentConfig {
    pub fn load(path: &Path) -> Result<DeploymentConfig, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(path, e))?;
        let mut cfg: DeploymentConfig = serde_json::from_str(&text).map_err(|e| config_err(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.store_path);
        resolve(&mut cfg.registry_path);
        resolve(&mut cfg.keys_path);
        if let Some(p) = cfg.watchlist_path.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.scenario_path.as_mut() {
            resolve(p);
        }
        if let Some(store) = std::env::var_os(STORE_ENV).filter(|s| !s.is_empty()) {
            cfg.store_path = PathBuf::from(store);
        }
        Ok(cfg)
    }

    /// Reads every referenced file and checks the settings.
    pub fn into_deployment(self) -> Result<Deployment, PipelineError> {
        if !(1..=MAX_NGRAM_N).contains(&self.ngram_n) {
            return Err(PipelineError::Config(format!("ngram_n must be in 1..={MAX_NGRAM_N}")));
        }
        if !(self.determinant_threshold > 0.0 && self.determinant_threshold < 1.0) {
            return Err(PipelineError::Config("determinant_threshold must be in (0,1)".into()));
        }
        if self.resource_schema.is_empty() {
            return Err(PipelineError::Config("resource_schema is empty".into()));
        }
        let registry = Registry::load(&self.registry_path)?;
        let keys = KeyRing::load(&self.keys_path)?;
        let watchlists = match &self.watchlist_path {
            Some(p) => Watchlists::load(p).map_err(PipelineError::Config)?,
            None => Watchlists::default(),
        };
        let scenario = self.scenario_path.as_deref().map(load_scenario).transpose()?;
        let mut seen = BTreeMap::new();
        let mut engines = Vec::with_capacity(self.engines.len());
        for mut engine in self.engines {
            engine.threshold.get_or_insert(self.determinant_threshold);
            engine.validate()?;
            if seen.insert(engine.engine_id.clone(), ()).is_some() {
                return Err(PipelineError::Config(format!("engine {:?} configured twice", engine.engine_id)));
            }
            engines.push(engine);
        }
        Ok(Deployment {
            store: ChainStore::new(self.store_path),
            registry,
            keys,
            watchlists,
            ngram_n: self.ngram_n,
            resource_schema: self.resource_schema,
            engines,
            scenario,
            threshold: self.determinant_threshold,
            extractors: self.extractors,
        })
    }
}

impl Deployment {
    pub fn load(path: &Path) -> Result<Deployment, PipelineError> {
        DeploymentConfig::load(path)?.into_deployment()
    }
}
