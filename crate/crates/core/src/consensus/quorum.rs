use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("a consortium needs at least one participant, got {0}")]
pub struct InvalidParticipantCount(pub usize);

/// Signatures required to commit a consortium block: ⌈2n/3⌉.
pub fn quorum_threshold(n: usize) -> Result<usize, InvalidParticipantCount> {
    if n < 1 {
        return Err(InvalidParticipantCount(n));
    }
    Ok((2 * n).div_ceil(3))
}
