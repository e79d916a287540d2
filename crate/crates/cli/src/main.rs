//! `b2mdf` command-line front end. Every command prints one JSON document
//! `{"ok", "command", "result" | "error"}` on stdout. Exit status is 0 on
//! success, 1 on a domain error and 2 on a usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use b2mdf::payload::AppVersion;
use b2mdf::pipeline::{
    decide, export_features, ingest, scan, scenario_for, store_registry, verify_export, verify_store, Deployment,
    DeploymentConfig, DynamicInputs, STORE_ENV, STORE_REGISTRY,
};
use b2mdf::ledger::{ChainStore, Registry};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "b2mdf", version, about = "Consortium malware detection over per-app chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Target {
    /// Application package name.
    #[arg(long = "app")]
    app_id: String,
    /// Version code.
    #[arg(long = "version")]
    version_code: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract features from an APK and append them to the feature chain.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        apk: PathBuf,
        /// Recorded system-call trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Recorded resource samples (CSV).
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        timestamp: u64,
    },
    /// Score an ingested version with every configured engine.
    Scan {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value_t = 0)]
        timestamp: u64,
    },
    /// Run a consensus round and report the final verdict.
    Decide {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        target: Target,
        /// Network scenario; defaults to the one named in the config.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Write the round transcript here as JSON Lines.
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        timestamp: u64,
    },
    /// Audit every chain in a store.
    Verify {
        #[arg(long)]
        store: PathBuf,
        /// Defaults to the registry saved inside the store.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Write the feature blocks of one version for a third party. The store
    /// comes from --store or --config, else from the store variable.
    Export {
        #[arg(long, conflicts_with = "store")]
        config: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check an exported file against a registry.
    VerifyExport {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        registry: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Scan { .. } => "scan",
            Command::Decide { .. } => "decide",
            Command::Verify { .. } => "verify",
            Command::Export { .. } => "export",
            Command::VerifyExport { .. } => "verify-export",
        }
    }
}

/// Command failure: message, optional machine-readable detail, and whether
/// it is a usage error.
struct Failure {
    message: String,
    detail: Option<Value>,
    usage: bool,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Failure {
        Failure {
            message: e.to_string(),
            detail: None,
            usage: false,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::from(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    String::from_utf8(read(path)?).map_err(|_| Failure::from(format!("{}: not UTF-8", path.display())))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn run(command: &Command) -> Result<Value, Failure> {
    match command {
        Command::Ingest {
            config,
            apk,
            trace,
            samples,
            timestamp,
        } => {
            let dep = Deployment::load(config)?;
            let apk = read(apk)?;
            let trace = trace.as_deref().map(read_text).transpose()?;
            let samples = samples.as_deref().map(read_text).transpose()?;
            let inputs = DynamicInputs {
                trace: trace.as_deref(),
                samples: samples.as_deref(),
            };
            Ok(to_value(&ingest(&dep, &apk, inputs, *timestamp)?))
        }
        Command::Scan {
            config,
            target,
            timestamp,
        } => {
            let dep = Deployment::load(config)?;
            let app = AppVersion::new(target.app_id.clone(), target.version_code);
            let report = scan(&dep, &app, *timestamp)?;
            if report.appended.is_empty() && !report.errors.is_empty() {
                return Err(Failure {
                    message: "every engine failed".into(),
                    detail: Some(to_value(&report)),
                    usage: false,
                });
            }
            Ok(to_value(&report))
        }
        Command::Decide {
            config,
            target,
            scenario,
            transcript,
            timestamp,
        } => {
            let dep = Deployment::load(config)?;
            let scenario = scenario_for(&dep, scenario.as_deref())?;
            let app = AppVersion::new(target.app_id.clone(), target.version_code);
            let report = decide(&dep, &app, &scenario, *timestamp)?;
            let round = report.round.as_ref().map(|r| {
                json!({
                    "status": r.status,
                    "proposer": r.proposer,
                    "quorum": r.quorum,
                    "signatures_obtained": r.signatures_obtained,
                    "messages": r.transcript.len(),
                })
            });
            if let (Some(path), Some(r)) = (transcript, &report.round) {
                fs::write(path, r.transcript_jsonl()).map_err(|e| Failure::from(format!("{}: {e}", path.display())))?;
            }
            Ok(json!({ "verdict": report.verdict, "round": round }))
        }
        Command::Verify { store, registry } => {
            let registry = match registry {
                Some(p) => Registry::load(p)?,
                None => store_registry(store)?,
            };
            let report = verify_store(store, &registry)?;
            if !report.valid {
                return Err(Failure {
                    message: "store failed verification".into(),
                    detail: Some(to_value(&report)),
                    usage: false,
                });
            }
            Ok(to_value(&report))
        }
        Command::Export {
            config,
            store,
            target,
            out,
        } => {
            let store = match (config, store, std::env::var_os(STORE_ENV).filter(|s| !s.is_empty())) {
                (Some(c), _, _) => ChainStore::new(DeploymentConfig::load(c)?.store_path),
                (None, Some(s), _) => ChainStore::new(s),
                (None, None, Some(s)) => ChainStore::new(PathBuf::from(s)),
                (None, None, None) => {
                    return Err(Failure {
                        message: format!("no store: pass --store or --config, or set {STORE_ENV}"),
                        detail: None,
                        usage: true,
                    })
                }
            };
            let app = AppVersion::new(target.app_id.clone(), target.version_code);
            let export = export_features(&store, &app, out)?;
            Ok(json!({
                "out": out.display().to_string(),
                "app_id": export.app_id,
                "version_code": export.version_code,
                "blocks": export.blocks.len(),
                "registry": store.root().join(STORE_REGISTRY).display().to_string(),
            }))
        }
        Command::VerifyExport { file, registry } => {
            let registry = Registry::load(registry)?;
            Ok(to_value(&verify_export(&read(file)?, &registry)?))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let doc = json!({"ok": false, "command": null, "error": {"kind": "usage", "message": e.to_string()}});
            println!("{doc}");
            return ExitCode::from(2);
        }
    };
    let name = cli.command.name();
    match run(&cli.command) {
        Ok(result) => {
            println!("{}", json!({"ok": true, "command": name, "result": result}));
            ExitCode::SUCCESS
        }
        Err(f) => {
            let kind = if f.usage { "usage" } else { "domain" };
            let mut error = json!({"kind": kind, "message": f.message});
            if let Some(detail) = f.detail {
                error["detail"] = detail;
            }
            println!("{}", json!({"ok": false, "command": name, "error": error}));
            ExitCode::from(if f.usage { 2 } else { 1 })
        }
    }
}
