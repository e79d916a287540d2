use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::proposal::{latest_scores, propose, try_commit, validate, AppChains, ConsensusError, Proposal, ProposalStatus};
use super::quorum::quorum_threshold;
use crate::engines::Verdict;
use crate::ledger::{Block, BlockSignature, KeyRing, Registry, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultBehavior {
    /// Proposes and validates against the inverted verdict class.
    FlipVerdict,
    /// Sends nothing at all.
    Silent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultyEngine {
    pub engine_id: String,
    pub behavior: FaultBehavior,
}

/// Simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimNetConfig {
    pub seed: u64,
    #[serde(default)]
    pub drop_probability: f64,
    #[serde(default)]
    pub max_delay_ticks: u64,
    #[serde(default)]
    pub faulty_engines: Vec<FaultyEngine>,
    /// Participating engines; all registered engines when absent. The
    /// quorum is always computed over every registered engine.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engines: Option<Vec<String>>,
}

impl SimNetConfig {
    pub fn reliable(seed: u64) -> SimNetConfig {
        SimNetConfig {
            seed,
            drop_probability: 0.0,
            max_delay_ticks: 0,
            faulty_engines: Vec::new(),
            engines: None,
        }
    }

    pub fn validate(&self, registry: &Registry) -> Result<(), ConsensusError> {
        let invalid = |m: String| Err(ConsensusError::InvalidScenario(m));
        if !(0.0..1.0).contains(&self.drop_probability) {
            return invalid(format!("drop_probability {} outside [0,1)", self.drop_probability));
        }
        let is_engine = |id: &str| registry.get(id).is_some_and(|p| p.role == Role::DetectionEngine);
        let mut seen = BTreeSet::new();
        for f in &self.faulty_engines {
            if !is_engine(&f.engine_id) {
                return invalid(format!("faulty engine {:?} is not a registered detection engine", f.engine_id));
            }
            if !seen.insert(f.engine_id.as_str()) {
                return invalid(format!("faulty engine {:?} listed twice", f.engine_id));
            }
        }
        for id in self.engines.iter().flatten() {
            if !is_engine(id) {
                return invalid(format!("engine {id:?} is not a registered detection engine"));
            }
        }
        Ok(())
    }

    fn behavior(&self, id: &str) -> Option<FaultBehavior> {
        self.faulty_engines
            .iter()
            .find(|f| f.engine_id == id)
            .map(|f| f.behavior)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundStatus {
    Committed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub tick: u64,
    pub actor: String,
    pub event: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub status: RoundStatus,
    pub committed_block: Option<Block>,
    pub transcript: Vec<TranscriptEntry>,
    pub signatures_obtained: usize,
    pub quorum: usize,
    pub proposer: Option<String>,
}

impl RoundOutcome {
    /// JSON Lines, one entry per line.
    pub fn transcript_jsonl(&self) -> String {
        self.transcript
            .iter()
            .map(|e| serde_json::to_string(e).expect("transcript entries are plain strings") + "\n")
            .collect()
    }
}

enum Message {
    Proposal { to: String },
    Signature(BlockSignature),
}

struct Round<'a> {
    cfg: &'a SimNetConfig,
    rng: ChaCha8Rng,
    queue: BTreeMap<(u64, u64), Message>,
    seq: u64,
    transcript: Vec<TranscriptEntry>,
}

impl Round<'_> {
    fn log(&mut self, tick: u64, actor: &str, event: &str, detail: impl Into<String>) {
        self.transcript.push(TranscriptEntry {
            tick,
            actor: actor.to_string(),
            event: event.to_string(),
            detail: detail.into(),
        });
    }

    /// Every message consumes exactly two draws: drop, then delay.
    fn send(&mut self, now: u64, from: &str, to: &str, msg: Message) {
        let dropped = self.rng.random::<f64>() < self.cfg.drop_probability;
        let delay = self.rng.random_range(0..=self.cfg.max_delay_ticks);
        let what = match &msg {
            Message::Proposal { .. } => "proposal",
            Message::Signature(_) => "signature",
        };
        if dropped {
            self.log(now, from, "drop", format!("{what} to {to}"));
            return;
        }
        let at = now.saturating_add(delay);
        self.log(now, from, "send", format!("{what} to {to}, arrives at {at}"));
        self.queue.insert((at, self.seq), msg);
        self.seq += 1;
    }
}

/// Runs one consensus round for `version_code` and, on success, appends the
/// committed block to `chains.cb`.
pub fn run_round(
    cfg: &SimNetConfig,
    registry: &Registry,
    keys: &KeyRing,
    chains: &mut AppChains,
    version_code: u64,
    timestamp: u64,
) -> Result<RoundOutcome, ConsensusError> {
    cfg.validate(registry)?;
    let n = registry.detection_engine_count();
    let quorum = quorum_threshold(n)?;
    let participants: Vec<String> = registry
        .with_role(Role::DetectionEngine)
        .map(|p| p.id.clone())
        .filter(|id| cfg.engines.as_ref().is_none_or(|list| list.contains(id)))
        .collect();

    let mut round = Round {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        queue: BTreeMap::new(),
        seq: 0,
        transcript: Vec::new(),
    };
    let mut outcome = RoundOutcome {
        status: RoundStatus::Failed,
        committed_block: None,
        transcript: Vec::new(),
        signatures_obtained: 0,
        quorum,
        proposer: None,
    };
    round.log(0, "network", "start", format!("n={n} quorum={quorum} participants={}", participants.len()));

    let scores = latest_scores(&chains.depb, version_code);
    let with_scores: Vec<&String> = participants.iter().filter(|id| scores.contains_key(*id)).collect();
    let proposer_id = with_scores
        .iter()
        .find(|id| scores[**id].0.verdict == Verdict::Malicious)
        .or_else(|| with_scores.first())
        .map(|id| (*id).clone());
    let Some(proposer_id) = proposer_id else {
        round.log(0, "network", "fail", "no participant has a score record");
        outcome.transcript = round.transcript;
        return Ok(outcome);
    };
    outcome.proposer = Some(proposer_id.clone());

    let behavior = |id: &str| cfg.behavior(id);
    if behavior(&proposer_id) == Some(FaultBehavior::Silent) {
        round.log(0, &proposer_id, "silent", "withholds its proposal");
        round.log(0, "network", "fail", "no proposal");
        outcome.transcript = round.transcript;
        return Ok(outcome);
    }

    let proposer = registry
        .get(&proposer_id)
        .ok_or_else(|| ConsensusError::NotAnEngine(proposer_id.clone()))?;
    let flip = behavior(&proposer_id) == Some(FaultBehavior::FlipVerdict);
    let mut proposal: Proposal = propose(proposer, keys.key_for(proposer)?, chains, version_code, timestamp, flip)?;
    round.log(
        0,
        &proposer_id,
        "propose",
        format!("{:?} with {} evidence digests", proposal.decision.proposed_verdict, proposal.decision.evidence.len()),
    );

    let index = chains.digest_index();
    let mut status = commit_step(&mut round, 0, &proposer_id, &mut proposal, n, chains, registry);
    if status == ProposalStatus::Pending {
        for to in participants.iter().filter(|id| **id != proposer_id) {
            round.send(0, &proposer_id, to, Message::Proposal { to: to.clone() });
        }
    }

    while status == ProposalStatus::Pending {
        let Some(((tick, _), msg)) = round.queue.pop_first() else {
            break;
        };
        match msg {
            Message::Proposal { to } => {
                match behavior(&to) {
                    Some(FaultBehavior::Silent) => {
                        round.log(tick, &to, "silent", "ignores proposal");
                        continue;
                    }
                    b => {
                        let validator = registry.get(&to).ok_or_else(|| ConsensusError::NotAnEngine(to.clone()))?;
                        let key = keys.key_for(validator)?;
                        let flip = b == Some(FaultBehavior::FlipVerdict);
                        match validate(validator, key, &proposal, chains, &index, flip) {
                            Ok(sig) => {
                                round.log(tick, &to, "endorse", "signed proposal");
                                round.send(tick, &to, &proposer_id, Message::Signature(sig));
                            }
                            Err(refusal) => round.log(tick, &to, "refuse", format!("{refusal:?}")),
                        }
                    }
                }
            }
            Message::Signature(sig) => {
                let genuine = registry
                    .get(&sig.signer)
                    .is_some_and(|p| p.public_key.verify(&proposal.digest.0, &sig.signature));
                if !genuine || proposal.has_signed(&sig.signer) {
                    round.log(tick, &proposer_id, "reject-signature", sig.signer.clone());
                    continue;
                }
                round.log(tick, &proposer_id, "signature", sig.signer.clone());
                proposal.collected.push(sig);
                status = commit_step(&mut round, tick, &proposer_id, &mut proposal, n, chains, registry);
            }
        }
    }

    outcome.signatures_obtained = proposal.signer_count();
    if status == ProposalStatus::Committed {
        outcome.status = RoundStatus::Committed;
        outcome.committed_block = chains.cb.blocks().last().cloned();
    } else {
        let last = round.transcript.last().map_or(0, |e| e.tick);
        round.log(
            last,
            "network",
            "fail",
            format!("{} of {quorum} required signatures", proposal.signer_count()),
        );
    }
    outcome.transcript = round.transcript;
    Ok(outcome)
}

fn commit_step(
    round: &mut Round<'_>,
    tick: u64,
    proposer_id: &str,
    proposal: &mut Proposal,
    n: usize,
    chains: &mut AppChains,
    registry: &Registry,
) -> ProposalStatus {
    match try_commit(proposal, n, &mut chains.cb, registry) {
        Ok(ProposalStatus::Committed) => {
            round.log(
                tick,
                proposer_id,
                "commit",
                format!("height {} with {} signatures", proposal.block.header.height, proposal.signer_count()),
            );
            ProposalStatus::Committed
        }
        Ok(status) => status,
        Err(e) => {
            round.log(tick, proposer_id, "append-rejected", e.to_string());
            proposal.status = ProposalStatus::Failed;
            ProposalStatus::Failed
        }
    }
}
