use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::quorum::{quorum_threshold, InvalidParticipantCount};
use crate::engines::{ScoreRecord, Verdict};
use crate::ledger::{
    finite, to_value, Block, BlockSignature, Chain, ChainKind, ChainStore, Digest, LedgerError,
    ParticipantIdentity, Registry, RegistryError, Role, SecretKey, StoreError,
};

/// One engine's latest recorded score, as snapshotted by the proposer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineScore {
    pub engine_id: String,
    #[serde(serialize_with = "finite::serialize")]
    pub malice_score: f64,
    pub verdict: Verdict,
    pub detail: String,
}

/// Consortium block payload.
///
/// The aggregate score is not stored: signatures cover the block digest,
/// which is fixed before the endorsers are known. It is recomputed from
/// `engine_scores` and the block's signers by [`aggregate_score`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "decision")]
pub struct ConsensusDecision {
    pub app_id: String,
    pub version_code: u64,
    pub proposed_verdict: Verdict,
    /// Score blocks for this version, then the proposer's feature evidence.
    pub evidence: Vec<Digest>,
    pub proposer_id: String,
    /// Sorted by engine id.
    pub engine_scores: Vec<EngineScore>,
}

impl ConsensusDecision {
    pub const KIND: &'static str = "decision";
}

/// Mean malice score of the engines in `signers`, or `None` if none of them
/// appears in the snapshot.
pub fn aggregate_score<'a>(decision: &ConsensusDecision, signers: impl IntoIterator<Item = &'a str>) -> Option<f64> {
    let signers: HashSet<&str> = signers.into_iter().collect();
    let scores: Vec<f64> = decision
        .engine_scores
        .iter()
        .filter(|s| signers.contains(s.engine_id.as_str()))
        .map(|s| s.malice_score)
        .collect();
    if scores.is_empty() {
        None
    } else {
        Some(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProposalStatus {
    Pending,
    Committed,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub decision: ConsensusDecision,
    /// Unsigned consortium block carrying `decision`; every signature
    /// covers its digest.
    pub block: Block,
    pub digest: Digest,
    pub collected: Vec<BlockSignature>,
    pub status: ProposalStatus,
}

impl Proposal {
    pub fn signer_count(&self) -> usize {
        self.collected.len()
    }

    pub fn has_signed(&self, id: &str) -> bool {
        self.collected.iter().any(|s| s.signer == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Refusal {
    EvidenceUnresolved,
    VerdictDisagreement,
    NoOwnScore,
    AlreadySigned,
    NotAnEngine,
    MalformedProposal,
}

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("engine {engine_id} has no score record for {app_id} version {version_code}")]
    NoScoreRecord {
        engine_id: String,
        app_id: String,
        version_code: u64,
    },
    #[error("no score chain for app {0:?}")]
    MissingChain(String),
    #[error("participant {0:?} is not a registered detection engine")]
    NotAnEngine(String),
    #[error("consortium append rejected: {0}")]
    AppendRejected(LedgerError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Participants(#[from] InvalidParticipantCount),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// One app's three chains, loaded together.
#[derive(Debug, Clone)]
pub struct AppChains {
    pub dipb: Chain,
    pub depb: Chain,
    pub cb: Chain,
}

impl AppChains {
    pub fn load(store: &ChainStore, app_id: &str) -> Result<AppChains, StoreError> {
        Ok(AppChains {
            dipb: store.load_or_new(app_id, ChainKind::Dipb)?,
            depb: store.load_or_new(app_id, ChainKind::Depb)?,
            cb: store.load_or_new(app_id, ChainKind::Cb)?,
        })
    }

    pub fn app_id(&self) -> &str {
        self.depb.app_id()
    }

    /// Digests of every feature and score block.
    pub fn digest_index(&self) -> HashSet<Digest> {
        self.dipb
            .blocks()
            .iter()
            .chain(self.depb.blocks())
            .filter_map(|b| b.digest().ok())
            .collect()
    }
}

/// Latest score record per engine for `version_code`, with its block digest.
pub fn latest_scores(depb: &Chain, version_code: u64) -> BTreeMap<String, (ScoreRecord, Digest)> {
    let mut out = BTreeMap::new();
    for block in depb.blocks() {
        if block.payload_kind() != Some(ScoreRecord::KIND) || block.payload_version() != Some(version_code) {
            continue;
        }
        let (Ok(record), Ok(digest)) = (block.decode::<ScoreRecord>(), block.digest()) else {
            continue;
        };
        if record.engine_id == block.header.author_id {
            out.insert(record.engine_id.clone(), (record, digest));
        }
    }
    out
}

fn all_score_digests(depb: &Chain, version_code: u64) -> Vec<Digest> {
    depb.blocks()
        .iter()
        .filter(|b| b.payload_kind() == Some(ScoreRecord::KIND) && b.payload_version() == Some(version_code))
        .filter_map(|b| b.digest().ok())
        .collect()
}

/// Builds, and self-signs, the proposer's decision for one version.
pub fn propose_decision(
    proposer: &ParticipantIdentity,
    key: &SecretKey,
    chains: &AppChains,
    version_code: u64,
    timestamp: u64,
) -> Result<Proposal, ConsensusError> {
    propose(proposer, key, chains, version_code, timestamp, false)
}

pub(crate) fn propose(
    proposer: &ParticipantIdentity,
    key: &SecretKey,
    chains: &AppChains,
    version_code: u64,
    timestamp: u64,
    flip: bool,
) -> Result<Proposal, ConsensusError> {
    if proposer.role != Role::DetectionEngine {
        return Err(ConsensusError::NotAnEngine(proposer.id.clone()));
    }
    if chains.depb.is_empty() {
        return Err(ConsensusError::MissingChain(chains.app_id().to_string()));
    }
    let scores = latest_scores(&chains.depb, version_code);
    let (own, _) = scores.get(&proposer.id).ok_or_else(|| ConsensusError::NoScoreRecord {
        engine_id: proposer.id.clone(),
        app_id: chains.app_id().to_string(),
        version_code,
    })?;
    let proposed_verdict = if flip { own.verdict.inverted() } else { own.verdict };

    let mut evidence = all_score_digests(&chains.depb, version_code);
    for d in &own.evidence {
        if !evidence.contains(d) {
            evidence.push(*d);
        }
    }
    let decision = ConsensusDecision {
        app_id: chains.app_id().to_string(),
        version_code,
        proposed_verdict,
        evidence,
        proposer_id: proposer.id.clone(),
        engine_scores: scores
            .values()
            .map(|(r, _)| EngineScore {
                engine_id: r.engine_id.clone(),
                malice_score: r.malice_score,
                verdict: r.verdict,
                detail: r.detail.clone(),
            })
            .collect(),
    };
    let payload = to_value(&decision).map_err(LedgerError::from)?;
    let block = chains.cb.prepare(&payload, &proposer.id, timestamp)?;
    let digest = block.digest().map_err(LedgerError::from)?;
    let signature = key.sign(&digest.0);
    if !proposer.public_key.verify(&digest.0, &signature) {
        return Err(LedgerError::SignatureFailure(proposer.id.clone()).into());
    }
    Ok(Proposal {
        decision,
        block,
        digest,
        collected: vec![BlockSignature {
            signer: proposer.id.clone(),
            signature,
        }],
        status: ProposalStatus::Pending,
    })
}

/// Signs iff every evidence digest resolves, the score snapshot matches the
/// cited score blocks, and the validator's own latest verdict equals the
/// proposed one.
pub fn validate_proposal(
    validator: &ParticipantIdentity,
    key: &SecretKey,
    proposal: &Proposal,
    chains: &AppChains,
) -> Result<BlockSignature, Refusal> {
    validate(validator, key, proposal, chains, &chains.digest_index(), false)
}

pub(crate) fn validate(
    validator: &ParticipantIdentity,
    key: &SecretKey,
    proposal: &Proposal,
    chains: &AppChains,
    index: &HashSet<Digest>,
    flip: bool,
) -> Result<BlockSignature, Refusal> {
    if validator.role != Role::DetectionEngine {
        return Err(Refusal::NotAnEngine);
    }
    if proposal.has_signed(&validator.id) {
        return Err(Refusal::AlreadySigned);
    }
    let d = &proposal.decision;
    let consistent = to_value(d).is_ok_and(|v| v == proposal.block.payload)
        && proposal.block.digest().is_ok_and(|x| x == proposal.digest)
        && proposal.block.header.app_id == chains.app_id();
    if !consistent {
        return Err(Refusal::MalformedProposal);
    }

    if d.evidence.is_empty() || !d.evidence.iter().all(|e| index.contains(e)) {
        return Err(Refusal::EvidenceUnresolved);
    }
    let cited: Vec<ScoreRecord> = chains
        .depb
        .blocks()
        .iter()
        .filter(|b| b.digest().is_ok_and(|x| d.evidence.contains(&x)))
        .filter_map(|b| b.decode::<ScoreRecord>().ok())
        .collect();
    let snapshot_ok = d.engine_scores.iter().all(|s| {
        cited.iter().any(|r| {
            r.engine_id == s.engine_id
                && r.version_code == d.version_code
                && r.malice_score == s.malice_score
                && r.verdict == s.verdict
                && r.detail == s.detail
        })
    });
    if !snapshot_ok {
        return Err(Refusal::EvidenceUnresolved);
    }

    let scores = latest_scores(&chains.depb, d.version_code);
    let (own, _) = scores.get(&validator.id).ok_or(Refusal::NoOwnScore)?;
    let own_verdict = if flip { own.verdict.inverted() } else { own.verdict };
    if own_verdict != d.proposed_verdict {
        return Err(Refusal::VerdictDisagreement);
    }
    Ok(BlockSignature {
        signer: validator.id.clone(),
        signature: key.sign(&proposal.digest.0),
    })
}

/// Appends the block once distinct signatures reach ⌈2n/3⌉; otherwise
/// leaves the proposal pending.
pub fn try_commit(
    proposal: &mut Proposal,
    n: usize,
    cb: &mut Chain,
    registry: &Registry,
) -> Result<ProposalStatus, ConsensusError> {
    if proposal.status != ProposalStatus::Pending {
        return Ok(proposal.status);
    }
    let needed = quorum_threshold(n)?;
    let distinct: HashSet<&str> = proposal.collected.iter().map(|s| s.signer.as_str()).collect();
    if distinct.len() < needed {
        return Ok(ProposalStatus::Pending);
    }
    let mut block = proposal.block.clone();
    block.signatures = proposal.collected.clone();
    cb.append_signed(block, registry, Some(n))
        .map_err(ConsensusError::AppendRejected)?;
    proposal.status = ProposalStatus::Committed;
    Ok(ProposalStatus::Committed)
}
