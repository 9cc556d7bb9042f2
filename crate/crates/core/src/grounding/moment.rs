//! Frame intervals resolved from an anchor frame and a navigation directive.
//!
//! Directive names follow the usual convention for this pipeline, which reads
//! backwards at first: `LookBehind` covers the anchor to the end of the video
//! (events after the anchor), `LookAhead` covers the start of the video to the
//! anchor (events before it).

use std::fmt;

use serde::{Deserialize, Serialize};

use super::GroundingError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavigationDirective {
    /// `[0, anchor]`
    LookAhead,
    /// `[anchor, len - 1]`
    LookBehind,
    /// Fixed window centered on the anchor.
    LookAround,
}

impl NavigationDirective {
    pub const ALL: [NavigationDirective; 3] = [
        NavigationDirective::LookAhead,
        NavigationDirective::LookBehind,
        NavigationDirective::LookAround,
    ];

    pub fn phrase(self) -> &'static str {
        match self {
            NavigationDirective::LookAhead => "look ahead",
            NavigationDirective::LookBehind => "look behind",
            NavigationDirective::LookAround => "look around",
        }
    }
}

impl fmt::Display for NavigationDirective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.phrase())
    }
}

/// How a moment was obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentOrigin {
    #[default]
    Grounded,
    FullVideo,
    GroundTruth,
}

/// Inclusive frame interval `[start_index, end_index]` used as evidence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedMoment {
    pub anchor_index: usize,
    pub directive: NavigationDirective,
    pub start_index: usize,
    pub end_index: usize,
    pub video_len: usize,
    #[serde(default)]
    pub origin: MomentOrigin,
}

impl GroundedMoment {
    /// The whole video as evidence.
    pub fn full_video(video_len: usize) -> Result<Self, GroundingError> {
        if video_len == 0 {
            return Err(GroundingError::EmptyVideo);
        }
        Ok(GroundedMoment {
            anchor_index: 0,
            directive: NavigationDirective::LookBehind,
            start_index: 0,
            end_index: video_len - 1,
            video_len,
            origin: MomentOrigin::FullVideo,
        })
    }

    /// An externally supplied interval; the anchor is its first frame.
    pub fn external(start: usize, end: usize, video_len: usize) -> Result<Self, GroundingError> {
        if start > end || end >= video_len {
            return Err(GroundingError::InvalidInterval {
                start,
                end,
                video_len,
            });
        }
        Ok(GroundedMoment {
            anchor_index: start,
            directive: NavigationDirective::LookAround,
            start_index: start,
            end_index: end,
            video_len,
            origin: MomentOrigin::GroundTruth,
        })
    }

    pub fn len(&self) -> usize {
        self.end_index - self.start_index + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.start_index..=self.end_index).contains(&frame)
    }

    /// Structural invariants, plus the directive rules for grounded moments.
    /// `window` is the look-around length the moment was built with.
    pub fn check(&self, window: usize) -> Result<(), String> {
        let GroundedMoment {
            anchor_index: a,
            start_index: s,
            end_index: e,
            video_len: n,
            ..
        } = *self;
        if n == 0 || !(s <= a && a <= e && e < n) {
            return Err(format!("bounds violated: 0 <= {s} <= {a} <= {e} < {n}"));
        }
        if self.origin != MomentOrigin::Grounded {
            return Ok(());
        }
        match self.directive {
            NavigationDirective::LookBehind if s != a || e != n - 1 => {
                Err(format!("look behind must be [{a}, {}], got [{s}, {e}]", n - 1))
            }
            NavigationDirective::LookAhead if s != 0 || e != a => {
                Err(format!("look ahead must be [0, {a}], got [{s}, {e}]"))
            }
            NavigationDirective::LookAround if self.len() != window.min(n) => Err(format!(
                "look around length {} != min({window}, {n})",
                self.len()
            )),
            _ => Ok(()),
        }
    }
}

/// Resolves the evidence interval.
///
/// Look-around windows start at `anchor - window / 2` and are shifted, not
/// truncated, when they run past either end of the video, so their length
/// stays `min(window, video_len)`.
pub fn ground_moment(
    anchor: usize,
    directive: NavigationDirective,
    video_len: usize,
    window: usize,
) -> Result<GroundedMoment, GroundingError> {
    if anchor >= video_len {
        return Err(GroundingError::AnchorOutOfRange { anchor, video_len });
    }
    if window == 0 {
        return Err(GroundingError::ZeroWindow);
    }
    let last = video_len - 1;
    let (start, end) = match directive {
        NavigationDirective::LookBehind => (anchor, last),
        NavigationDirective::LookAhead => (0, anchor),
        NavigationDirective::LookAround => {
            if window >= video_len {
                (0, last)
            } else {
                let start = anchor.saturating_sub(window / 2).min(video_len - window);
                (start, start + window - 1)
            }
        }
    };
    Ok(GroundedMoment {
        anchor_index: anchor,
        directive,
        start_index: start,
        end_index: end,
        video_len,
        origin: MomentOrigin::Grounded,
    })
}

/// `k` indices spread uniformly over the moment, endpoints included when
/// `k >= 2`. Short intervals repeat frames. `k == 1` picks the center.
pub fn resample_frames(moment: &GroundedMoment, k: usize) -> Vec<usize> {
    let start = moment.start_index;
    let span = moment.end_index - moment.start_index;
    match k {
        0 => Vec::new(),
        1 => vec![start + span / 2],
        _ => {
            let denom = k - 1;
            (0..k)
                .map(|i| start + (2 * i * span + denom) / (2 * denom))
                .collect()
        }
    }
}
