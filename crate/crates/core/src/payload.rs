//! Feature payloads stored on feature chains.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ledger::{finite, Digest};

/// Identity of one uploaded app version.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AppVersion {
    pub app_id: String,
    pub version_code: u64,
}

impl AppVersion {
    pub fn new(app_id: impl Into<String>, version_code: u64) -> AppVersion {
        AppVersion {
            app_id: app_id.into(),
            version_code,
        }
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        if s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(serde::de::Error::custom("hex must be lowercase"));
        }
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpcodeSequenceFeature {
    pub app_id: String,
    pub version_code: u64,
    /// Opcode bytes in method order, then instruction order, as hex.
    #[serde(with = "hex_bytes")]
    pub opcodes: Vec<u8>,
    pub opcode_histogram: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apk_sha256: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dex_sha256: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermissionFeature {
    pub app_id: String,
    pub version_code: u64,
    pub permissions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apk_sha256: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ApiPattern {
    pub class_contains: String,
    pub method: String,
}

impl ApiPattern {
    pub fn new(class_contains: impl Into<String>, method: impl Into<String>) -> ApiPattern {
        ApiPattern {
            class_contains: class_contains.into(),
            method: method.into(),
        }
    }

    /// Feature-vector key suffix: `<class_contains>-><method>`.
    pub fn key(&self) -> String {
        format!("{}->{}", self.class_contains, self.method)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiHit {
    pub class_contains: String,
    pub method: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiCallFeature {
    pub app_id: String,
    pub version_code: u64,
    pub hits: Vec<ApiHit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apk_sha256: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dex_sha256: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandHit {
    pub command: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandFeature {
    pub app_id: String,
    pub version_code: u64,
    pub hits: Vec<CommandHit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apk_sha256: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dex_sha256: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NgramFeature {
    pub app_id: String,
    pub version_code: u64,
    pub n: u32,
    /// N-grams joined with `|`.
    pub counts: BTreeMap<String, u64>,
}

impl NgramFeature {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceFeature {
    pub app_id: String,
    pub version_code: u64,
    /// `<metric>.<mean|max|last>` keys.
    #[serde(serialize_with = "finite::map")]
    pub values: BTreeMap<String, f64>,
}

/// Any feature block payload. Serialized with a `kind` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeaturePayload {
    Opcodes(OpcodeSequenceFeature),
    Permissions(PermissionFeature),
    ApiCalls(ApiCallFeature),
    Commands(CommandFeature),
    SyscallNgrams(NgramFeature),
    Resources(ResourceFeature),
}

impl FeaturePayload {
    pub const KINDS: [&'static str; 6] = [
        "opcodes",
        "permissions",
        "api_calls",
        "commands",
        "syscall_ngrams",
        "resources",
    ];

    pub fn kind(&self) -> &'static str {
        match self {
            FeaturePayload::Opcodes(_) => "opcodes",
            FeaturePayload::Permissions(_) => "permissions",
            FeaturePayload::ApiCalls(_) => "api_calls",
            FeaturePayload::Commands(_) => "commands",
            FeaturePayload::SyscallNgrams(_) => "syscall_ngrams",
            FeaturePayload::Resources(_) => "resources",
        }
    }

    pub fn app_version(&self) -> AppVersion {
        let (app_id, version_code) = match self {
            FeaturePayload::Opcodes(f) => (&f.app_id, f.version_code),
            FeaturePayload::Permissions(f) => (&f.app_id, f.version_code),
            FeaturePayload::ApiCalls(f) => (&f.app_id, f.version_code),
            FeaturePayload::Commands(f) => (&f.app_id, f.version_code),
            FeaturePayload::SyscallNgrams(f) => (&f.app_id, f.version_code),
            FeaturePayload::Resources(f) => (&f.app_id, f.version_code),
        };
        AppVersion::new(app_id.clone(), version_code)
    }

    pub fn apk_sha256(&self) -> Option<Digest> {
        match self {
            FeaturePayload::Opcodes(f) => f.apk_sha256,
            FeaturePayload::Permissions(f) => f.apk_sha256,
            FeaturePayload::ApiCalls(f) => f.apk_sha256,
            FeaturePayload::Commands(f) => f.apk_sha256,
            _ => None,
        }
    }

    pub fn dex_sha256(&self) -> Option<Digest> {
        match self {
            FeaturePayload::Opcodes(f) => f.dex_sha256,
            FeaturePayload::ApiCalls(f) => f.dex_sha256,
            FeaturePayload::Commands(f) => f.dex_sha256,
            _ => None,
        }
    }
}
