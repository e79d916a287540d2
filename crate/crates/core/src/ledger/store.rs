//! On-disk layout: `<root>/<app_id>/<KIND>.chain`, one canonical block per
//! line, LF-terminated.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::chain::{Block, Chain};
use super::ChainKind;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid app id {0:?}")]
    InvalidAppId(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: malformed block: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cannot encode block: {0}")]
    Encode(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Raw contents of one chain file: every block that decoded, plus the
/// index of the first line that did not.
#[derive(Debug, Clone)]
pub struct ChainFile {
    pub app_id: String,
    pub kind: ChainKind,
    pub path: PathBuf,
    pub blocks: Vec<Block>,
    pub malformed_at: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ChainStore {
    root: PathBuf,
}

/// App ids double as directory names.
pub fn validate_app_id(app_id: &str) -> Result<(), StoreError> {
    let ok = !app_id.is_empty()
        && !app_id.starts_with('.')
        && app_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidAppId(app_id.to_string()))
    }
}

impl ChainStore {
    pub fn new(root: impl Into<PathBuf>) -> ChainStore {
        ChainStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn chain_path(&self, app_id: &str, kind: ChainKind) -> Result<PathBuf, StoreError> {
        validate_app_id(app_id)?;
        Ok(self.root.join(app_id).join(format!("{kind}.chain")))
    }

    pub fn exists(&self, app_id: &str, kind: ChainKind) -> bool {
        self.chain_path(app_id, kind).is_ok_and(|p| p.is_file())
    }

    /// Loads a chain; `None` when its file does not exist. Malformed lines
    /// are an error here; use [`ChainStore::read_chain_file`] to audit.
    pub fn load(&self, app_id: &str, kind: ChainKind) -> Result<Option<Chain>, StoreError> {
        let path = self.chain_path(app_id, kind)?;
        if !path.is_file() {
            return Ok(None);
        }
        let file = read_chain_file(&path, app_id, kind)?;
        if let Some(line) = file.malformed_at {
            return Err(StoreError::Malformed {
                path: path.display().to_string(),
                line: line + 1,
                message: "not a canonical block".into(),
            });
        }
        Ok(Some(Chain::from_blocks(app_id, kind, file.blocks)))
    }

    pub fn load_or_new(&self, app_id: &str, kind: ChainKind) -> Result<Chain, StoreError> {
        Ok(self
            .load(app_id, kind)?
            .unwrap_or_else(|| Chain::new(app_id, kind)))
    }

    /// Writes the whole chain through a temporary file and rename.
    pub fn save(&self, chain: &Chain) -> Result<(), StoreError> {
        let path = self.chain_path(chain.app_id(), chain.kind())?;
        let dir = path.parent().expect("chain path has a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut bytes = Vec::new();
        for block in chain.blocks() {
            let line = block
                .to_canonical_line()
                .map_err(|e| StoreError::Encode(e.to_string()))?;
            bytes.extend_from_slice(&line);
            bytes.push(b'\n');
        }
        let tmp = path.with_extension("chain.tmp");
        fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(())
    }

    /// Every `<app>/<KIND>.chain` file under the root, sorted by app then
    /// kind. A missing root is an empty store.
    pub fn list_chains(&self) -> Result<Vec<(String, ChainKind, PathBuf)>, StoreError> {
        let mut out = Vec::new();
        if !self.root.exists() {
            return Ok(out);
        }
        let mut apps: Vec<_> = fs::read_dir(&self.root)
            .map_err(io_err(&self.root))?
            .collect::<Result<_, _>>()
            .map_err(io_err(&self.root))?;
        apps.sort_by_key(|e| e.file_name());
        for app in apps {
            let app_path = app.path();
            if !app_path.is_dir() {
                continue;
            }
            let Some(app_id) = app.file_name().to_str().map(str::to_string) else {
                continue;
            };
            if validate_app_id(&app_id).is_err() {
                continue;
            }
            for kind in ChainKind::ALL {
                let path = app_path.join(format!("{kind}.chain"));
                if path.is_file() {
                    out.push((app_id.clone(), kind, path));
                }
            }
        }
        Ok(out)
    }

    pub fn apps(&self) -> Result<Vec<String>, StoreError> {
        let mut apps: Vec<String> = self.list_chains()?.into_iter().map(|(a, _, _)| a).collect();
        apps.dedup();
        Ok(apps)
    }
}

/// Decodes a chain file line by line, stopping at the first bad line.
pub fn read_chain_file(path: &Path, app_id: &str, kind: ChainKind) -> Result<ChainFile, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut blocks = Vec::new();
    let mut malformed_at = None;
    if !bytes.is_empty() {
        let body = match bytes.strip_suffix(b"\n") {
            Some(b) => b,
            None => {
                // Unterminated final line.
                malformed_at = Some(bytes.split(|&b| b == b'\n').count() - 1);
                &bytes[..]
            }
        };
        for (i, line) in body.split(|&b| b == b'\n').enumerate() {
            if malformed_at.is_some_and(|m| i >= m) {
                break;
            }
            match Block::from_canonical_line(line) {
                Ok(b) => blocks.push(b),
                Err(_) => {
                    malformed_at = Some(i);
                    break;
                }
            }
        }
    }
    Ok(ChainFile {
        app_id: app_id.to_string(),
        kind,
        path: path.to_path_buf(),
        blocks,
        malformed_at,
    })
}

impl ChainStore {
    pub fn read_chain_file(&self, app_id: &str, kind: ChainKind) -> Result<ChainFile, StoreError> {
        let path = self.chain_path(app_id, kind)?;
        read_chain_file(&path, app_id, kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{ParticipantIdentity, Role, SecretKey};
    use serde_json::json;

    fn sample_chain() -> Chain {
        let key = SecretKey::from_seed_phrase("fe");
        let fe = ParticipantIdentity {
            id: "fe".into(),
            role: Role::FeatureExtractor,
            public_key: key.public_key(),
        };
        let mut chain = Chain::new("com.example", ChainKind::Dipb);
        for i in 0..3 {
            chain
                .append(&json!({"kind": "commands", "i": i}), &fe, &key, i)
                .unwrap();
        }
        chain
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let store = ChainStore::new(dir.path());
        assert!(store.load("com.example", ChainKind::Dipb).unwrap().is_none());
        let chain = sample_chain();
        store.save(&chain).unwrap();
        let path = dir.path().join("com.example").join("DIPB.chain");
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.ends_with('\n'));
        let back = store.load("com.example", ChainKind::Dipb).unwrap().unwrap();
        assert_eq!(back, chain);
        assert_eq!(store.list_chains().unwrap().len(), 1);
    }

    #[test]
    fn rejects_path_like_ids() {
        let store = ChainStore::new("/tmp/x");
        for bad in ["", "..", "../etc", "a/b", ".hidden", "a b"] {
            assert!(store.chain_path(bad, ChainKind::Cb).is_err(), "{bad:?}");
        }
        assert!(store.chain_path("com.example_app-2", ChainKind::Cb).is_ok());
    }

    #[test]
    fn malformed_line_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let store = ChainStore::new(dir.path());
        store.save(&sample_chain()).unwrap();
        let path = store.chain_path("com.example", ChainKind::Dipb).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let second_line = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        bytes[second_line] = b'[';
        fs::write(&path, &bytes).unwrap();
        let file = store.read_chain_file("com.example", ChainKind::Dipb).unwrap();
        assert_eq!(file.malformed_at, Some(1));
        assert_eq!(file.blocks.len(), 1);
        assert!(matches!(
            store.load("com.example", ChainKind::Dipb),
            Err(StoreError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn missing_terminator_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let store = ChainStore::new(dir.path());
        store.save(&sample_chain()).unwrap();
        let path = store.chain_path("com.example", ChainKind::Dipb).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        *bytes.last_mut().unwrap() = b' ';
        fs::write(&path, &bytes).unwrap();
        let file = store.read_chain_file("com.example", ChainKind::Dipb).unwrap();
        assert_eq!(file.malformed_at, Some(2));
        assert_eq!(file.blocks.len(), 2);
    }
}
