//! Third-party feature export: the full feature chain's headers, digests and
//! signatures, plus the payloads of one app version. Verifiable with the
//! registry alone.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ledger::{
    authorize, canonical_bytes, canonical_bytes_of, Action, BlockHeader, BlockSignature, Chain, ChainKind,
    Digest, Registry,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportedBlock {
    pub digest: Digest,
    pub header: BlockHeader,
    pub signatures: Vec<BlockSignature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureExport {
    pub app_id: String,
    pub chain_kind: ChainKind,
    pub version_code: u64,
    pub blocks: Vec<ExportedBlock>,
}

impl FeatureExport {
    /// Canonical JSON plus a trailing newline.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = canonical_bytes_of(self).expect("export holds only encodable values");
        bytes.push(b'\n');
        bytes
    }
}

/// Builds the export from a feature chain. `None` when the version has no
/// blocks.
pub fn build_export(dipb: &Chain, version_code: u64) -> Option<FeatureExport> {
    let mut any = false;
    let blocks = dipb
        .blocks()
        .iter()
        .map(|b| {
            let include = b.payload_version() == Some(version_code);
            any |= include;
            ExportedBlock {
                digest: b.digest().expect("stored blocks are canonical"),
                header: b.header.clone(),
                signatures: b.signatures.clone(),
                payload: include.then(|| b.payload.clone()),
            }
        })
        .collect();
    any.then(|| FeatureExport {
        app_id: dipb.app_id().to_string(),
        chain_kind: ChainKind::Dipb,
        version_code,
        blocks,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum ExportError {
    #[error("export is not valid JSON of the expected shape: {0}")]
    Malformed(String),
    #[error("export bytes are not in canonical form")]
    NotCanonical,
    #[error("block {0}: recorded digest does not match its header")]
    DigestMismatch(u64),
    #[error("block {0}: height out of sequence")]
    HeightGap(u64),
    #[error("block {0}: previous-hash link broken")]
    LinkMismatch(u64),
    #[error("block {0}: payload hash mismatch")]
    PayloadHashMismatch(u64),
    #[error("block {0}: bad or missing signature")]
    BadSignature(u64),
    #[error("block {0}: author may not write feature chains")]
    UnauthorizedAuthor(u64),
    #[error("block {0}: payload belongs to another version")]
    WrongVersion(u64),
    #[error("export carries no payloads")]
    NoPayloads,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExportSummary {
    pub app_id: String,
    pub version_code: u64,
    pub blocks: usize,
    pub payloads: usize,
}

/// Recomputes every digest, link, payload hash and signature.
pub fn verify_export(bytes: &[u8], registry: &Registry) -> Result<ExportSummary, ExportError> {
    let body = bytes.strip_suffix(b"\n").ok_or(ExportError::NotCanonical)?;
    let export: FeatureExport = serde_json::from_slice(body).map_err(|e| ExportError::Malformed(e.to_string()))?;
    if canonical_bytes_of(&export).ok().as_deref() != Some(body) {
        return Err(ExportError::NotCanonical);
    }

    let mut prev = Digest::ZERO;
    let mut payloads = 0;
    for (i, b) in export.blocks.iter().enumerate() {
        let h = i as u64;
        let header = &b.header;
        if header.height != h {
            return Err(ExportError::HeightGap(h));
        }
        if header.prev_hash != prev || header.app_id != export.app_id || header.chain_kind != export.chain_kind {
            return Err(ExportError::LinkMismatch(h));
        }
        let digest = canonical_bytes_of(header)
            .map(|bytes| Digest::of(&bytes))
            .map_err(|_| ExportError::DigestMismatch(h))?;
        if digest != b.digest {
            return Err(ExportError::DigestMismatch(h));
        }
        if let Some(payload) = &b.payload {
            let ok = canonical_bytes(payload).is_ok_and(|p| Digest::of(&p) == header.payload_hash);
            if !ok {
                return Err(ExportError::PayloadHashMismatch(h));
            }
            if payload.get("version_code").and_then(Value::as_u64) != Some(export.version_code) {
                return Err(ExportError::WrongVersion(h));
            }
            payloads += 1;
        }
        let mut signers = BTreeSet::new();
        let sigs_ok = b.signatures.len() == 1
            && b.signatures.iter().all(|s| {
                signers.insert(s.signer.as_str())
                    && s.signer == header.author_id
                    && registry
                        .get(&s.signer)
                        .is_some_and(|p| p.public_key.verify(&digest.0, &s.signature))
            });
        if !sigs_ok {
            return Err(ExportError::BadSignature(h));
        }
        let author_ok = registry
            .get(&header.author_id)
            .is_some_and(|p| authorize(p.role, export.chain_kind, Action::Append));
        if !author_ok {
            return Err(ExportError::UnauthorizedAuthor(h));
        }
        prev = digest;
    }
    if payloads == 0 {
        return Err(ExportError::NoPayloads);
    }
    Ok(ExportSummary {
        app_id: export.app_id,
        version_code: export.version_code,
        blocks: export.blocks.len(),
        payloads,
    })
}
