//! Consortium rounds: one engine proposes a verdict block for an app version,
//! the other engines validate its evidence against their own recorded
//! verdicts and co-sign, and the block commits once ⌈2n/3⌉ distinct engines
//! have signed. Rounds run over a seeded, simulated network.

mod proposal;
mod quorum;
mod sim;

pub use proposal::{
    aggregate_score, latest_scores, propose_decision, try_commit, validate_proposal, AppChains,
    ConsensusDecision, ConsensusError, EngineScore, Proposal, ProposalStatus, Refusal,
};
pub use quorum::{quorum_threshold, InvalidParticipantCount};
pub use sim::{
    run_round, FaultBehavior, FaultyEngine, RoundOutcome, RoundStatus, SimNetConfig,
    TranscriptEntry,
};
