use std::collections::BTreeSet;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::canonical::{canonical_bytes, canonical_bytes_of, to_value, CanonicalError};
use super::crypto::{Digest, SecretKey, SignatureBytes};
use super::registry::{ParticipantIdentity, Registry};
use super::{authorize, Action, ChainKind, Role};
use crate::consensus::quorum_threshold;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockHeader {
    pub app_id: String,
    pub chain_kind: ChainKind,
    pub height: u64,
    pub prev_hash: Digest,
    pub payload_hash: Digest,
    pub author_id: String,
    /// Logical milliseconds supplied by the caller.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSignature {
    pub signer: String,
    pub signature: SignatureBytes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub header: BlockHeader,
    /// Canonical JSON payload (feature, score or decision record).
    pub payload: Value,
    pub signatures: Vec<BlockSignature>,
}

/// SHA-256 over the canonical header encoding. This is the value every
/// signature covers and the next block links to.
pub fn block_digest(block: &Block) -> Result<Digest, CanonicalError> {
    Ok(Digest::of(&canonical_bytes_of(&block.header)?))
}

impl Block {
    pub fn digest(&self) -> Result<Digest, CanonicalError> {
        block_digest(self)
    }

    /// The payload's `kind` tag, if it carries one.
    pub fn payload_kind(&self) -> Option<&str> {
        self.payload.get("kind").and_then(Value::as_str)
    }

    pub fn payload_version(&self) -> Option<u64> {
        self.payload.get("version_code").and_then(Value::as_u64)
    }

    pub fn decode<T: DeserializeOwned>(&self) -> Result<T, LedgerError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| LedgerError::Decode(e.to_string()))
    }

    pub fn signers(&self) -> impl Iterator<Item = &str> {
        self.signatures.iter().map(|s| s.signer.as_str())
    }

    /// One chain-file line, without the terminator.
    pub fn to_canonical_line(&self) -> Result<Vec<u8>, CanonicalError> {
        canonical_bytes_of(self)
    }

    /// Parses a chain-file line. Anything that is not exactly the canonical
    /// encoding of a block is rejected.
    pub fn from_canonical_line(line: &[u8]) -> Result<Block, String> {
        let block: Block = serde_json::from_slice(line).map_err(|e| e.to_string())?;
        let again = block.to_canonical_line().map_err(|e| e.to_string())?;
        if again != line {
            return Err("line is not in canonical form".into());
        }
        Ok(block)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValidationReason {
    LinkMismatch,
    PayloadHashMismatch,
    BadSignature,
    UnauthorizedAuthor,
    HeightGap,
    QuorumShortfall,
    /// A persisted line could not be decoded as a canonical block.
    MalformedBlock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub first_bad_height: Option<u64>,
    pub reason: Option<ValidationReason>,
}

impl ValidationReport {
    pub fn ok() -> ValidationReport {
        ValidationReport {
            valid: true,
            first_bad_height: None,
            reason: None,
        }
    }

    pub fn failed(height: u64, reason: ValidationReason) -> ValidationReport {
        ValidationReport {
            valid: false,
            first_bad_height: Some(height),
            reason: Some(reason),
        }
    }
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("{role:?} may not append to {kind}")]
    Unauthorized { role: Role, kind: ChainKind },
    #[error("chain failed its link check at height {:?} ({:?})", .0.first_bad_height, .0.reason)]
    StaleChain(ValidationReport),
    #[error("signature by {0:?} does not verify under its registered key")]
    SignatureFailure(String),
    #[error("block rejected: {0:?}")]
    Rejected(ValidationReason),
    #[error("block addressed to {got_app}/{got_kind}, chain is {app}/{kind}")]
    WrongChain {
        app: String,
        kind: ChainKind,
        got_app: String,
        got_kind: ChainKind,
    },
    #[error("unknown participant {0:?}")]
    UnknownParticipant(String),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error("payload decode failed: {0}")]
    Decode(String),
}

/// Selects blocks by payload kind and/or `version_code`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockFilter {
    pub kind: Option<String>,
    pub version: Option<u64>,
}

impl BlockFilter {
    pub fn kind(kind: impl Into<String>) -> BlockFilter {
        BlockFilter {
            kind: Some(kind.into()),
            version: None,
        }
    }

    pub fn version(version: u64) -> BlockFilter {
        BlockFilter {
            kind: None,
            version: Some(version),
        }
    }

    pub fn matches(&self, block: &Block) -> bool {
        self.kind
            .as_deref()
            .is_none_or(|k| block.payload_kind() == Some(k))
            && self.version.is_none_or(|v| block.payload_version() == Some(v))
    }
}

/// One app's chain of one kind. Single writer; see [`ChainStore`] for
/// persistence.
///
/// [`ChainStore`]: super::ChainStore
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    app_id: String,
    kind: ChainKind,
    blocks: Vec<Block>,
}

impl Chain {
    pub fn new(app_id: impl Into<String>, kind: ChainKind) -> Chain {
        Chain {
            app_id: app_id.into(),
            kind,
            blocks: Vec::new(),
        }
    }

    /// Wraps already-persisted blocks without checking them.
    pub fn from_blocks(app_id: impl Into<String>, kind: ChainKind, blocks: Vec<Block>) -> Chain {
        Chain {
            app_id: app_id.into(),
            kind,
            blocks,
        }
    }

    pub fn app_id(&self) -> &str {
        &self.app_id
    }

    pub fn kind(&self) -> ChainKind {
        self.kind
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut Vec<Block> {
        &mut self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Digest of the last block, or the zero digest for an empty chain.
    pub fn tip_digest(&self) -> Result<Digest, CanonicalError> {
        match self.blocks.last() {
            Some(b) => b.digest(),
            None => Ok(Digest::ZERO),
        }
    }

    pub fn get_blocks(&self, filter: Option<&BlockFilter>) -> Vec<&Block> {
        self.blocks
            .iter()
            .filter(|b| filter.is_none_or(|f| f.matches(b)))
            .collect()
    }

    /// Finds a block by digest.
    pub fn find(&self, digest: &Digest) -> Option<&Block> {
        self.blocks
            .iter()
            .find(|b| b.digest().ok().as_ref() == Some(digest))
    }

    /// Heights, links and payload hashes only; needs no registry.
    pub fn check_links(&self) -> ValidationReport {
        let mut prev = Digest::ZERO;
        for (i, block) in self.blocks.iter().enumerate() {
            match check_structure(self, i as u64, &prev, block) {
                Ok(d) => prev = d,
                Err(reason) => return ValidationReport::failed(i as u64, reason),
            }
        }
        ValidationReport::ok()
    }

    /// Builds the unsigned next block for `payload`.
    pub fn prepare(
        &self,
        payload: &Value,
        author_id: &str,
        timestamp: u64,
    ) -> Result<Block, LedgerError> {
        let payload_hash = Digest::of(&canonical_bytes(payload)?);
        Ok(Block {
            header: BlockHeader {
                app_id: self.app_id.clone(),
                chain_kind: self.kind,
                height: self.blocks.len() as u64,
                prev_hash: self.tip_digest()?,
                payload_hash,
                author_id: author_id.to_string(),
                timestamp,
            },
            payload: payload.clone(),
            signatures: Vec::new(),
        })
    }

    /// Appends a single-author block.
    pub fn append(
        &mut self,
        payload: &Value,
        author: &ParticipantIdentity,
        key: &SecretKey,
        timestamp: u64,
    ) -> Result<&Block, LedgerError> {
        if !authorize(author.role, self.kind, Action::Append) {
            return Err(LedgerError::Unauthorized {
                role: author.role,
                kind: self.kind,
            });
        }
        let report = self.check_links();
        if !report.valid {
            return Err(LedgerError::StaleChain(report));
        }
        let mut block = self.prepare(payload, &author.id, timestamp)?;
        let digest = block.digest()?;
        let signature = key.sign(&digest.0);
        if !author.public_key.verify(&digest.0, &signature) {
            return Err(LedgerError::SignatureFailure(author.id.clone()));
        }
        block.signatures.push(BlockSignature {
            signer: author.id.clone(),
            signature,
        });
        self.blocks.push(block);
        Ok(self.blocks.last().expect("just pushed"))
    }

    pub fn append_record<T: Serialize>(
        &mut self,
        record: &T,
        author: &ParticipantIdentity,
        key: &SecretKey,
        timestamp: u64,
    ) -> Result<&Block, LedgerError> {
        let payload = to_value(record)?;
        self.append(&payload, author, key, timestamp)
    }

    /// Appends a block that was prepared and signed elsewhere (the
    /// consortium path). The block must be a fully valid successor.
    pub fn append_signed(
        &mut self,
        block: Block,
        registry: &Registry,
        quorum_n: Option<usize>,
    ) -> Result<&Block, LedgerError> {
        if block.header.app_id != self.app_id || block.header.chain_kind != self.kind {
            return Err(LedgerError::WrongChain {
                app: self.app_id.clone(),
                kind: self.kind,
                got_app: block.header.app_id.clone(),
                got_kind: block.header.chain_kind,
            });
        }
        let author = registry
            .get(&block.header.author_id)
            .ok_or_else(|| LedgerError::UnknownParticipant(block.header.author_id.clone()))?;
        if !authorize(author.role, self.kind, Action::Append) {
            return Err(LedgerError::Unauthorized {
                role: author.role,
                kind: self.kind,
            });
        }
        let report = self.check_links();
        if !report.valid {
            return Err(LedgerError::StaleChain(report));
        }
        let prev = self.tip_digest()?;
        check_block(self, self.blocks.len() as u64, &prev, &block, registry, quorum_n)
            .map_err(LedgerError::Rejected)?;
        self.blocks.push(block);
        Ok(self.blocks.last().expect("just pushed"))
    }
}

fn check_structure(
    chain: &Chain,
    height: u64,
    prev: &Digest,
    block: &Block,
) -> Result<Digest, ValidationReason> {
    let h = &block.header;
    if h.height != height {
        return Err(ValidationReason::HeightGap);
    }
    if h.app_id != chain.app_id || h.chain_kind != chain.kind || h.prev_hash != *prev {
        return Err(ValidationReason::LinkMismatch);
    }
    let payload_ok = canonical_bytes(&block.payload)
        .map(|bytes| Digest::of(&bytes) == h.payload_hash)
        .unwrap_or(false);
    if !payload_ok {
        return Err(ValidationReason::PayloadHashMismatch);
    }
    block.digest().map_err(|_| ValidationReason::PayloadHashMismatch)
}

/// Full per-block check, in the documented order. Returns the block's
/// digest for linking the next block.
fn check_block(
    chain: &Chain,
    height: u64,
    prev: &Digest,
    block: &Block,
    registry: &Registry,
    quorum_n: Option<usize>,
) -> Result<Digest, ValidationReason> {
    let digest = check_structure(chain, height, prev, block)?;
    let author_id = block.header.author_id.as_str();

    let mut seen = BTreeSet::new();
    for sig in &block.signatures {
        if !seen.insert(sig.signer.as_str()) {
            return Err(ValidationReason::BadSignature);
        }
        let verified = registry
            .get(&sig.signer)
            .is_some_and(|p| p.public_key.verify(&digest.0, &sig.signature));
        if !verified {
            return Err(ValidationReason::BadSignature);
        }
    }
    let author_signed = seen.contains(author_id);
    let shape_ok = match chain.kind {
        ChainKind::Dipb | ChainKind::Depb => block.signatures.len() == 1 && author_signed,
        ChainKind::Cb => author_signed,
    };
    if !shape_ok {
        return Err(ValidationReason::BadSignature);
    }

    let author_ok = registry
        .get(author_id)
        .is_some_and(|p| authorize(p.role, chain.kind, Action::Append));
    if !author_ok {
        return Err(ValidationReason::UnauthorizedAuthor);
    }

    if chain.kind == ChainKind::Cb {
        let all_engines = block.signatures.iter().all(|s| {
            registry
                .get(&s.signer)
                .is_some_and(|p| p.role == Role::DetectionEngine)
        });
        if !all_engines {
            return Err(ValidationReason::UnauthorizedAuthor);
        }
        let n = quorum_n.unwrap_or_else(|| registry.detection_engine_count());
        let needed = quorum_threshold(n).map_err(|_| ValidationReason::QuorumShortfall)?;
        if seen.len() < needed {
            return Err(ValidationReason::QuorumShortfall);
        }
    }
    Ok(digest)
}

/// Audits a whole chain, stopping at the first failing block.
pub fn verify_chain(chain: &Chain, registry: &Registry, quorum_n: Option<usize>) -> ValidationReport {
    let mut prev = Digest::ZERO;
    for (i, block) in chain.blocks.iter().enumerate() {
        match check_block(chain, i as u64, &prev, block, registry, quorum_n) {
            Ok(d) => prev = d,
            Err(reason) => return ValidationReport::failed(i as u64, reason),
        }
    }
    ValidationReport::ok()
}
