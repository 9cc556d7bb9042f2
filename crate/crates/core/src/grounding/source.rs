//! Where a video's frames come from.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{Frame, GroundingError};
use crate::providers::Attachment;

/// How the evidence interval for a task is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingMode {
    #[default]
    Grounded,
    FullVideo,
    GroundTruthIntervals,
}

impl GroundingMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "grounded" => Some(GroundingMode::Grounded),
            "fullvideo" | "full" => Some(GroundingMode::FullVideo),
            "groundtruthintervals" | "groundtruth" | "gt" => Some(GroundingMode::GroundTruthIntervals),
            _ => None,
        }
    }
}

pub trait VideoSource: Send + Sync {
    /// The sampled frames of a video, in time order.
    fn frames(&self, video_ref: &str) -> Result<Vec<Frame>, GroundingError>;
}

/// Indices of `k` frames spread uniformly over `n`, endpoints included.
pub fn uniform_indices(n: usize, k: usize) -> Vec<usize> {
    match (n, k) {
        (0, _) | (_, 0) => Vec::new(),
        _ if k >= n => (0..n).collect(),
        (_, 1) => vec![(n - 1) / 2],
        _ => (0..k).map(|i| (2 * i * (n - 1) + (k - 1)) / (2 * (k - 1))).collect(),
    }
}

/// Pre-extracted frames stored as `<root>/<video_ref>/<name>.{jpg,jpeg,png,webp}`,
/// ordered by file name. Videos with more frames than `frames_per_video` are
/// subsampled uniformly.
pub struct DirectorySource {
    pub root: PathBuf,
    pub frames_per_video: usize,
    /// Seconds between consecutive stored frames.
    pub frame_interval_s: f64,
}

impl VideoSource for DirectorySource {
    fn frames(&self, video_ref: &str) -> Result<Vec<Frame>, GroundingError> {
        let dir = self.root.join(video_ref);
        let io = |e: std::io::Error| GroundingError::Store(format!("{}: {e}", dir.display()));
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png" | "webp"))
                    .unwrap_or(false)
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(GroundingError::EmptyVideo);
        }
        uniform_indices(paths.len(), self.frames_per_video)
            .into_iter()
            .enumerate()
            .map(|(index, src)| {
                Ok(Frame {
                    index,
                    timestamp_s: src as f64 * self.frame_interval_s,
                    attachment: Attachment::file(&paths[src]).map_err(io)?,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_subsampling() {
        assert_eq!(uniform_indices(5, 10), vec![0, 1, 2, 3, 4]);
        assert_eq!(uniform_indices(100, 2), vec![0, 99]);
        let idx = uniform_indices(100, 24);
        assert_eq!(idx.len(), 24);
        assert_eq!((idx[0], idx[23]), (0, 99));
    }

    #[test]
    fn directory_frames_sorted_and_sampled() {
        let dir = tempfile::tempdir().unwrap();
        let v = dir.path().join("vid1");
        std::fs::create_dir(&v).unwrap();
        for i in 0..10 {
            std::fs::write(v.join(format!("{i:03}.jpg")), [i as u8]).unwrap();
        }
        std::fs::write(v.join("notes.txt"), "x").unwrap();
        let src = DirectorySource {
            root: dir.path().into(),
            frames_per_video: 4,
            frame_interval_s: 0.5,
        };
        let frames = src.frames("vid1").unwrap();
        assert_eq!(frames.len(), 4);
        assert_eq!(frames[0].index, 0);
        assert_eq!(frames[3].timestamp_s, 4.5);
        assert!(frames[3].attachment.uri.ends_with("009.jpg"));
        assert!(src.frames("missing").is_err());
        assert_eq!(GroundingMode::parse("full-video"), Some(GroundingMode::FullVideo));
    }
}
