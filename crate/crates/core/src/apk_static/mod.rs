//! Static analysis of APK containers: ZIP, binary XML manifests and DEX
//! bytecode, producing the opcode, permission, API-call and command feature
//! payloads.

pub mod axml;
pub mod dex;
pub mod manifest;
pub mod opcodes;
pub mod zip;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dex::{parse_dex, read_uleb128, CodeItem, DexError, DexFile, MethodRef};
pub use manifest::{parse_manifest, Component, ComponentKind, ManifestInfo, XmlEvent};
pub use opcodes::{decode_method, opcode_trace, OpcodeError, OpcodeTrace};
pub use zip::{open_apk, ApkContainer, ApkEntry, WellKnown};

use crate::ledger::Digest;
use crate::payload::{
    ApiCallFeature, ApiHit, ApiPattern, AppVersion, CommandFeature, CommandHit,
    OpcodeSequenceFeature, PermissionFeature,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StaticError {
    #[error("not a ZIP archive (no end-of-central-directory record)")]
    NotAZip,
    #[error("malformed ZIP: {0}")]
    MalformedZip(String),
    #[error("CRC-32 mismatch in {0}")]
    CrcMismatch(String),
    #[error("unsupported compression method {0}")]
    UnsupportedCompression(u16),
    #[error("malformed binary XML at offset {offset}: {reason}")]
    MalformedAxml { offset: usize, reason: String },
    #[error("malformed XML at line {line}")]
    MalformedXml { line: u32 },
    #[error("manifest has no package name")]
    MissingPackage,
    #[error("APK has no {0}")]
    MissingEntry(&'static str),
    #[error("{entry}: {source}")]
    Dex {
        entry: String,
        #[source]
        source: DexError,
    },
    #[error("{entry}: {source}")]
    Opcode {
        entry: String,
        #[source]
        source: OpcodeError,
    },
}

/// Editable API and command watchlists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Watchlists {
    #[serde(default = "default_api_watchlist")]
    pub api_watchlist: Vec<ApiPattern>,
    #[serde(default = "default_command_watchlist")]
    pub command_watchlist: Vec<String>,
}

impl Default for Watchlists {
    fn default() -> Self {
        Watchlists {
            api_watchlist: default_api_watchlist(),
            command_watchlist: default_command_watchlist(),
        }
    }
}

impl Watchlists {
    pub fn load(path: &Path) -> Result<Watchlists, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

pub fn default_api_watchlist() -> Vec<ApiPattern> {
    [
        ("Landroid/telephony/TelephonyManager;", "getDeviceId"),
        ("Landroid/telephony/TelephonyManager;", "getImei"),
        ("Landroid/telephony/TelephonyManager;", "getSubscriberId"),
        ("Landroid/telephony/SmsManager;", "sendTextMessage"),
        ("Landroid/telephony/SmsMessage;", "createFromPdu"),
        ("Landroid/content/pm/PackageManager;", "getInstalledPackages"),
        ("Landroid/content/pm/PackageManager;", "installPackage"),
    ]
    .into_iter()
    .map(|(c, m)| ApiPattern::new(c, m))
    .collect()
}

pub fn default_command_watchlist() -> Vec<String> {
    ["chmod", "mount", "/system/bin/su", "chown"]
        .into_iter()
        .map(String::from)
        .collect()
}

pub fn extract_opcode_sequence(dex: &DexFile, app: &AppVersion) -> Result<OpcodeSequenceFeature, OpcodeError> {
    let trace = opcode_trace(dex)?;
    Ok(OpcodeSequenceFeature {
        app_id: app.app_id.clone(),
        version_code: app.version_code,
        opcodes: trace.opcodes,
        opcode_histogram: trace.histogram,
        apk_sha256: None,
        dex_sha256: None,
    })
}

/// Counts watchlist matches over the method reference table (one count per
/// distinct reference, not per call site).
pub fn extract_api_calls(dex: &DexFile, watchlist: &[ApiPattern], app: &AppVersion) -> ApiCallFeature {
    ApiCallFeature {
        app_id: app.app_id.clone(),
        version_code: app.version_code,
        hits: api_hits(std::slice::from_ref(dex), watchlist),
        apk_sha256: None,
        dex_sha256: None,
    }
}

fn api_hits(dexes: &[DexFile], watchlist: &[ApiPattern]) -> Vec<ApiHit> {
    let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
    for dex in dexes {
        for m in &dex.method_refs {
            for (i, p) in watchlist.iter().enumerate() {
                if m.name == p.method && m.class.contains(&p.class_contains) {
                    *counts.entry(i).or_default() += 1;
                }
            }
        }
    }
    counts
        .into_iter()
        .map(|(i, count)| ApiHit {
            class_contains: watchlist[i].class_contains.clone(),
            method: watchlist[i].method.clone(),
            count,
        })
        .collect()
}

/// Case-sensitive substring matches against the string table; each distinct
/// string counts once per command it contains.
pub fn extract_commands(dex: &DexFile, watchlist: &[String], app: &AppVersion) -> CommandFeature {
    CommandFeature {
        app_id: app.app_id.clone(),
        version_code: app.version_code,
        hits: command_hits(std::slice::from_ref(dex), watchlist),
        apk_sha256: None,
        dex_sha256: None,
    }
}

fn command_hits(dexes: &[DexFile], watchlist: &[String]) -> Vec<CommandHit> {
    let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
    for dex in dexes {
        for s in &dex.string_table {
            for (i, cmd) in watchlist.iter().enumerate() {
                if !cmd.is_empty() && s.contains(cmd.as_str()) {
                    *counts.entry(i).or_default() += 1;
                }
            }
        }
    }
    counts
        .into_iter()
        .map(|(i, count)| CommandHit {
            command: watchlist[i].clone(),
            count,
        })
        .collect()
}

pub fn extract_permissions(manifest: &ManifestInfo) -> PermissionFeature {
    let mut permissions: Vec<String> = Vec::with_capacity(manifest.permissions.len());
    for p in &manifest.permissions {
        if !permissions.contains(p) {
            permissions.push(p.clone());
        }
    }
    PermissionFeature {
        app_id: manifest.package_name.clone(),
        version_code: manifest.version_code,
        permissions,
        apk_sha256: None,
    }
}

/// All four static features of one APK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticFeatures {
    pub manifest: ManifestInfo,
    pub well_known: WellKnown,
    pub apk_sha256: Digest,
    pub dex_sha256: Option<Digest>,
    pub opcodes: OpcodeSequenceFeature,
    pub permissions: PermissionFeature,
    pub api_calls: ApiCallFeature,
    pub commands: CommandFeature,
}

impl StaticFeatures {
    pub fn app_version(&self) -> AppVersion {
        AppVersion::new(self.manifest.package_name.clone(), self.manifest.version_code)
    }
}

/// Runs every static extractor over raw APK bytes. Multidex archives are
/// processed in `classes.dex`, `classes2.dex`, ... order.
pub fn analyze_apk(data: &[u8], watchlists: &Watchlists) -> Result<StaticFeatures, StaticError> {
    let apk = open_apk(data)?;
    let manifest_entry = apk
        .get("AndroidManifest.xml")
        .ok_or(StaticError::MissingEntry("AndroidManifest.xml"))?;
    let manifest = parse_manifest(&manifest_entry.data)?;
    let app = AppVersion::new(manifest.package_name.clone(), manifest.version_code);

    let mut dexes = Vec::new();
    let mut trace = OpcodeTrace::default();
    for entry in apk.dex_entries() {
        let dex = parse_dex(&entry.data).map_err(|source| StaticError::Dex {
            entry: entry.path.clone(),
            source,
        })?;
        let part = opcode_trace(&dex).map_err(|source| StaticError::Opcode {
            entry: entry.path.clone(),
            source,
        })?;
        trace.extend(&part);
        dexes.push(dex);
    }

    let apk_sha256 = Digest::of(data);
    let dex_sha256 = apk.get("classes.dex").map(|e| Digest::of(&e.data));

    let mut permissions = extract_permissions(&manifest);
    permissions.apk_sha256 = Some(apk_sha256);

    Ok(StaticFeatures {
        opcodes: OpcodeSequenceFeature {
            app_id: app.app_id.clone(),
            version_code: app.version_code,
            opcodes: trace.opcodes,
            opcode_histogram: trace.histogram,
            apk_sha256: Some(apk_sha256),
            dex_sha256,
        },
        api_calls: ApiCallFeature {
            app_id: app.app_id.clone(),
            version_code: app.version_code,
            hits: api_hits(&dexes, &watchlists.api_watchlist),
            apk_sha256: Some(apk_sha256),
            dex_sha256,
        },
        commands: CommandFeature {
            app_id: app.app_id.clone(),
            version_code: app.version_code,
            hits: command_hits(&dexes, &watchlists.command_watchlist),
            apk_sha256: Some(apk_sha256),
            dex_sha256,
        },
        permissions,
        well_known: apk.well_known,
        manifest,
        apk_sha256,
        dex_sha256,
    })
}
