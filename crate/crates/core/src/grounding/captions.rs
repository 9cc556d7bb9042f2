//! Per-video caption files.
//!
//! Captions depend on the fact they were conditioned on, so each file records
//! the fact hash it was produced under. A file with a null `fact_hash` holds
//! fact-independent captions and is accepted for any fact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CaptionedFrame, GroundingError};

pub fn fact_hash(fact: &str) -> String {
    hex::encode(Sha256::digest(fact.trim().as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionFile {
    pub video_ref: String,
    pub fact_hash: Option<String>,
    pub frames: Vec<CaptionedFrame>,
}

pub struct CaptionStore {
    dir: PathBuf,
}

impl CaptionStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CaptionStore { dir: dir.into() }
    }

    fn sanitized(video_ref: &str) -> String {
        video_ref
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
            .collect()
    }

    /// Fact-specific file first, then the fact-independent one.
    fn candidates(&self, video_ref: &str, fact: &str) -> [PathBuf; 2] {
        let base = Self::sanitized(video_ref);
        [
            self.dir.join(format!("{base}.{}.json", &fact_hash(fact)[..16])),
            self.dir.join(format!("{base}.json")),
        ]
    }

    pub fn load(&self, video_ref: &str, fact: &str) -> Result<Option<CaptionFile>, GroundingError> {
        let want = fact_hash(fact);
        for path in self.candidates(video_ref, fact) {
            if let Some(file) = read(&path)? {
                match &file.fact_hash {
                    Some(h) if *h != want => continue,
                    _ => return Ok(Some(file)),
                }
            }
        }
        Ok(None)
    }

    pub fn save(
        &self,
        video_ref: &str,
        fact: &str,
        frames: &[CaptionedFrame],
    ) -> Result<PathBuf, GroundingError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| GroundingError::Store(e.to_string()))?;
        let path = self.candidates(video_ref, fact)[0].clone();
        let file = CaptionFile {
            video_ref: video_ref.to_string(),
            fact_hash: Some(fact_hash(fact)),
            frames: frames.to_vec(),
        };
        let json = serde_json::to_vec_pretty(&file).expect("caption file serializes");
        std::fs::write(&path, json).map_err(|e| GroundingError::Store(e.to_string()))?;
        Ok(path)
    }
}

fn read(path: &Path) -> Result<Option<CaptionFile>, GroundingError> {
    match std::fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| GroundingError::Store(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(GroundingError::Store(e.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames() -> Vec<CaptionedFrame> {
        vec![CaptionedFrame {
            frame_index: 0,
            timestamp_s: 0.0,
            caption: "the boy runs".into(),
            triplets: vec![],
        }]
    }

    #[test]
    fn keyed_by_fact() {
        let dir = tempfile::tempdir().unwrap();
        let store = CaptionStore::new(dir.path());
        store.save("vid/1", "the boy runs", &frames()).unwrap();
        assert!(store.load("vid/1", "the boy runs").unwrap().is_some());
        assert!(store.load("vid/1", "the girl runs").unwrap().is_none());
        assert!(store.load("vid/2", "the boy runs").unwrap().is_none());
    }

    #[test]
    fn fact_independent_file_matches_any_fact() {
        let dir = tempfile::tempdir().unwrap();
        let file = CaptionFile {
            video_ref: "v".into(),
            fact_hash: None,
            frames: frames(),
        };
        std::fs::write(dir.path().join("v.json"), serde_json::to_vec(&file).unwrap()).unwrap();
        let store = CaptionStore::new(dir.path());
        assert_eq!(store.load("v", "anything").unwrap(), Some(file));
    }
}
