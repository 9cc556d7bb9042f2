//! Content-addressed response cache.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Attachment, ModelResponse, ProviderRole};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt cache entry {key}: {reason}")]
    Corrupt { key: String, reason: String },
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    role: ProviderRole,
    prompt: &'a str,
    attachments: Vec<&'a str>,
    model: &'a str,
    logprobs: bool,
}

/// Hex SHA-256 over the role, rendered prompt, attachment hashes, model id
/// and whether token probabilities were requested.
pub fn cache_key(
    role: ProviderRole,
    prompt: &str,
    attachments: &[Attachment],
    model_id: &str,
    logprobs: bool,
) -> String {
    let material = KeyMaterial {
        role,
        prompt,
        attachments: attachments.iter().map(|a| a.content_hash.as_str()).collect(),
        model: model_id,
        logprobs,
    };
    let bytes = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(bytes))
}

pub trait ResponseCache: Send + Sync {
    fn lookup(&self, key: &str) -> Result<Option<ModelResponse>, CacheError>;
    fn store(&self, key: &str, response: &ModelResponse) -> Result<(), CacheError>;
}

#[derive(Default)]
pub struct MemoryCache {
    entries: Mutex<HashMap<String, ModelResponse>>,
}

impl MemoryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ResponseCache for MemoryCache {
    fn lookup(&self, key: &str) -> Result<Option<ModelResponse>, CacheError> {
        Ok(self.entries.lock().unwrap().get(key).cloned())
    }

    fn store(&self, key: &str, response: &ModelResponse) -> Result<(), CacheError> {
        self.entries
            .lock()
            .unwrap()
            .insert(key.to_string(), response.clone());
        Ok(())
    }
}

/// One JSON file per key, named by the key.
pub struct DirCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl DirCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, CacheError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(DirCache {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }
}

impl ResponseCache for DirCache {
    fn lookup(&self, key: &str) -> Result<Option<ModelResponse>, CacheError> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| CacheError::Corrupt {
                key: key.to_string(),
                reason: e.to_string(),
            })
    }

    fn store(&self, key: &str, response: &ModelResponse) -> Result<(), CacheError> {
        let bytes = serde_json::to_vec(response).expect("response serializes");
        let _guard = self.write_lock.lock().unwrap();
        let tmp = self.dir.join(format!(".{key}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.path_for(key))?;
        Ok(())
    }
}
