//! Hash-linked, append-only per-app chains.
//!
//! Every app owns one chain of each [`ChainKind`]: feature blocks written by
//! extractors (DIPB), score blocks written by detection engines (DEPB), and
//! quorum-signed verdict blocks (CB). Blocks are hashed and signed over their
//! canonical JSON header; the header commits to the payload through
//! `payload_hash`.

mod canonical;
mod chain;
mod crypto;
mod registry;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use canonical::{canonical_bytes, canonical_bytes_of, to_value, CanonicalError};
pub(crate) use canonical::finite;
pub use chain::{
    block_digest, verify_chain, Block, BlockFilter, BlockHeader, BlockSignature, Chain,
    LedgerError, ValidationReason, ValidationReport,
};
pub use crypto::{Digest, HexError, PublicKey, SecretKey, SignatureBytes};
pub use registry::{KeyRing, ParticipantIdentity, Registry, RegistryError};
pub use store::{read_chain_file, validate_app_id, ChainFile, ChainStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChainKind {
    /// Dedicated internal private chain: feature blocks.
    #[serde(rename = "DIPB")]
    Dipb,
    /// Dedicated external private chain: per-version malice scores.
    #[serde(rename = "DEPB")]
    Depb,
    /// Consortium chain: quorum-signed decisions.
    #[serde(rename = "CB")]
    Cb,
}

impl ChainKind {
    pub const ALL: [ChainKind; 3] = [ChainKind::Dipb, ChainKind::Depb, ChainKind::Cb];

    pub fn as_str(self) -> &'static str {
        match self {
            ChainKind::Dipb => "DIPB",
            ChainKind::Depb => "DEPB",
            ChainKind::Cb => "CB",
        }
    }
}

impl fmt::Display for ChainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChainKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChainKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown chain kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    FeatureExtractor,
    DetectionEngine,
    ThirdParty,
    DeterminantAgent,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::FeatureExtractor,
        Role::DetectionEngine,
        Role::ThirdParty,
        Role::DeterminantAgent,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Append,
    Read,
}

/// Role-based access matrix.
///
/// Feature extractors write feature chains; detection engines write score
/// and consortium chains. Everyone registered may read everything.
pub fn authorize(role: Role, kind: ChainKind, action: Action) -> bool {
    match action {
        Action::Read => true,
        Action::Append => matches!(
            (role, kind),
            (Role::FeatureExtractor, ChainKind::Dipb)
                | (Role::DetectionEngine, ChainKind::Depb)
                | (Role::DetectionEngine, ChainKind::Cb)
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_examples() {
        assert!(authorize(Role::FeatureExtractor, ChainKind::Dipb, Action::Append));
        assert!(!authorize(Role::ThirdParty, ChainKind::Dipb, Action::Append));
        assert!(!authorize(Role::DetectionEngine, ChainKind::Dipb, Action::Append));
        assert!(authorize(Role::DetectionEngine, ChainKind::Cb, Action::Append));
        assert!(!authorize(Role::DeterminantAgent, ChainKind::Cb, Action::Append));
        assert!(!authorize(Role::FeatureExtractor, ChainKind::Depb, Action::Append));
    }

    #[test]
    fn reads_are_universal() {
        for role in Role::ALL {
            for kind in ChainKind::ALL {
                assert!(authorize(role, kind, Action::Read));
            }
        }
    }

    #[test]
    fn chain_kind_names() {
        for kind in ChainKind::ALL {
            assert_eq!(kind.as_str().parse::<ChainKind>().unwrap(), kind);
        }
        assert!("DECB".parse::<ChainKind>().is_err());
    }
}
