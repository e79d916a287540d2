use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::canonical::canonical_bytes_of;
use super::crypto::{PublicKey, SecretKey};
use super::Role;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("duplicate participant id {0:?}")]
    DuplicateParticipant(String),
    #[error("participant id must be a non-empty token without whitespace, got {0:?}")]
    InvalidId(String),
    #[error("no secret key for participant {0:?}")]
    MissingKey(String),
    #[error("key for {id:?} does not match its registered public key")]
    KeyMismatch { id: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantIdentity {
    pub id: String,
    pub role: Role,
    pub public_key: PublicKey,
}

/// Deployment-wide participant directory.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    participants: BTreeMap<String, ParticipantIdentity>,
}

impl Registry {
    pub fn new() -> Registry {
        Registry::default()
    }

    pub fn from_participants(
        participants: impl IntoIterator<Item = ParticipantIdentity>,
    ) -> Result<Registry, RegistryError> {
        let mut registry = Registry::new();
        for p in participants {
            registry.insert(p)?;
        }
        Ok(registry)
    }

    pub fn insert(&mut self, participant: ParticipantIdentity) -> Result<(), RegistryError> {
        if participant.id.is_empty() || participant.id.chars().any(char::is_whitespace) {
            return Err(RegistryError::InvalidId(participant.id));
        }
        if self.participants.contains_key(&participant.id) {
            return Err(RegistryError::DuplicateParticipant(participant.id));
        }
        self.participants.insert(participant.id.clone(), participant);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&ParticipantIdentity> {
        self.participants.get(id)
    }

    /// Participants in id order.
    pub fn iter(&self) -> impl Iterator<Item = &ParticipantIdentity> {
        self.participants.values()
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &ParticipantIdentity> {
        self.iter().filter(move |p| p.role == role)
    }

    /// Consortium size: every registered detection engine.
    pub fn detection_engine_count(&self) -> usize {
        self.with_role(Role::DetectionEngine).count()
    }

    pub fn len(&self) -> usize {
        self.participants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }

    pub fn load(path: &Path) -> Result<Registry, RegistryError> {
        let text = read(path)?;
        let list: Vec<ParticipantIdentity> =
            serde_json::from_str(&text).map_err(|e| RegistryError::Parse {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        Registry::from_participants(list)
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let list: Vec<&ParticipantIdentity> = self.iter().collect();
        let mut out = canonical_bytes_of(&list).expect("registry entries are always encodable");
        out.push(b'\n');
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), RegistryError> {
        fs::write(path, self.to_json_bytes()).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Secret keys held by one deployment, keyed by participant id. On disk:
/// a JSON object mapping id to 64 lowercase hex characters.
#[derive(Debug, Clone, Default)]
pub struct KeyRing {
    keys: BTreeMap<String, SecretKey>,
}

impl KeyRing {
    pub fn new() -> KeyRing {
        KeyRing::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, key: SecretKey) {
        self.keys.insert(id.into(), key);
    }

    pub fn get(&self, id: &str) -> Result<&SecretKey, RegistryError> {
        self.keys
            .get(id)
            .ok_or_else(|| RegistryError::MissingKey(id.to_string()))
    }

    /// Looks up the key for `participant` and checks it against the
    /// registered public key.
    pub fn key_for(&self, participant: &ParticipantIdentity) -> Result<&SecretKey, RegistryError> {
        let key = self.get(&participant.id)?;
        if key.public_key() != participant.public_key {
            return Err(RegistryError::KeyMismatch {
                id: participant.id.clone(),
            });
        }
        Ok(key)
    }

    pub fn load(path: &Path) -> Result<KeyRing, RegistryError> {
        let text = read(path)?;
        let raw: BTreeMap<String, String> =
            serde_json::from_str(&text).map_err(|e| RegistryError::Parse {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        let mut ring = KeyRing::new();
        for (id, hex) in raw {
            let key = SecretKey::from_hex(&hex).map_err(|e| RegistryError::Parse {
                path: path.display().to_string(),
                message: format!("{id}: {e}"),
            })?;
            ring.insert(id, key);
        }
        Ok(ring)
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let raw: BTreeMap<&String, String> =
            self.keys.iter().map(|(id, k)| (id, k.to_hex())).collect();
        let mut out = canonical_bytes_of(&raw).expect("hex strings are always encodable");
        out.push(b'\n');
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), RegistryError> {
        fs::write(path, self.to_json_bytes()).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn read(path: &Path) -> Result<String, RegistryError> {
    fs::read_to_string(path).map_err(|source| RegistryError::Io {
        path: path.display().to_string(),
        source,
    })
}
