//! Evidence grounding: fact-conditioned captions, structured semantics,
//! anchor-frame retrieval and the navigation directive that turns the anchor
//! into a frame interval.

mod captions;
mod moment;
mod source;

pub use captions::{fact_hash, CaptionFile, CaptionStore};
pub use moment::{ground_moment, resample_frames, GroundedMoment, MomentOrigin, NavigationDirective};
pub use source::{uniform_indices, DirectorySource, GroundingMode, VideoSource};

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{args, Attachment, ProviderError, Session};
use crate::qa::QuestionType;

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("text to parse is empty")]
    EmptyText,
    #[error("video has no frames")]
    EmptyVideo,
    #[error("no frame has a usable caption")]
    NoUsableCaptions,
    #[error("anchor {anchor} outside video of {video_len} frames")]
    AnchorOutOfRange { anchor: usize, video_len: usize },
    #[error("look-around window must be at least one frame")]
    ZeroWindow,
    #[error("interval [{start}, {end}] invalid for video of {video_len} frames")]
    InvalidInterval {
        start: usize,
        end: usize,
        video_len: usize,
    },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("caption store: {0}")]
    Store(String),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SemanticTriplet {
    pub subject: String,
    pub predicate: String,
    #[serde(default)]
    pub object: String,
}

impl SemanticTriplet {
    /// `None` unless subject and predicate are non-empty.
    pub fn new(subject: &str, predicate: &str, object: &str) -> Option<Self> {
        let (s, p, o) = (subject.trim(), predicate.trim(), object.trim());
        if s.is_empty() || p.is_empty() {
            return None;
        }
        Some(SemanticTriplet {
            subject: s.to_string(),
            predicate: p.to_string(),
            object: o.to_string(),
        })
    }

    fn fields(&self) -> [String; 3] {
        [
            normalize_field(&self.subject),
            normalize_field(&self.predicate),
            normalize_field(&self.object),
        ]
    }

    /// Number of non-empty fields equal after lowercasing and trimming.
    pub fn overlap(&self, other: &SemanticTriplet) -> usize {
        self.fields()
            .iter()
            .zip(other.fields().iter())
            .filter(|(a, b)| !a.is_empty() && a == b)
            .count()
    }
}

impl fmt::Display for SemanticTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} | {} | {})", self.subject, self.predicate, self.object)
    }
}

fn normalize_field(s: &str) -> String {
    s.trim().to_lowercase()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactStatement {
    pub text: String,
    #[serde(default)]
    pub triplets: Vec<SemanticTriplet>,
}

/// One sampled frame of a video.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub timestamp_s: f64,
    pub attachment: Attachment,
}

/// A frame's fact-conditioned caption. An empty caption marks a frame whose
/// captioning failed; such frames are skipped by retrieval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionedFrame {
    #[serde(rename = "index")]
    pub frame_index: usize,
    pub timestamp_s: f64,
    pub caption: String,
    #[serde(default)]
    pub triplets: Vec<SemanticTriplet>,
}

impl CaptionedFrame {
    pub fn is_sentinel(&self) -> bool {
        self.caption.trim().is_empty()
    }
}

fn first_line(text: &str) -> &str {
    text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("")
}

fn clean_clause(text: &str) -> String {
    let line = first_line(text);
    let line = line
        .split_once(':')
        .filter(|(head, _)| head.trim().eq_ignore_ascii_case("fact"))
        .map(|(_, rest)| rest)
        .unwrap_or(line);
    line.trim()
        .trim_matches(|c| c == '"' || c == '\'' || c == '`')
        .trim_end_matches('.')
        .trim()
        .to_string()
}

/// Pulls the event the question refers to out of the question.
/// An empty answer falls back to the question text itself (flagged).
pub fn extract_fact(session: &mut Session<'_>, question: &str) -> Result<FactStatement, GroundingError> {
    if question.trim().is_empty() {
        return Err(GroundingError::EmptyQuestion);
    }
    let reply = session.complete("fact", args([("question", question)]), vec![]);
    let text = match reply {
        Ok(r) => clean_clause(&r),
        Err(ProviderError::MalformedResponse(_)) => String::new(),
        Err(e) => return Err(e.into()),
    };
    let text = if text.is_empty() {
        session.transcript_mut().flag_last("fact-fallback");
        question.trim().trim_end_matches('?').to_string()
    } else {
        text
    };
    Ok(FactStatement {
        text,
        triplets: Vec::new(),
    })
}

fn render_previous(captions: &[CaptionedFrame]) -> String {
    if captions.is_empty() {
        return "(none)".to_string();
    }
    captions
        .iter()
        .map(|c| {
            let text = if c.is_sentinel() { "[unavailable]" } else { c.caption.as_str() };
            format!("[frame {}] {}", c.frame_index, text)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Captions frames in order, each conditioned on the fact and on every earlier
/// caption. A failed frame gets an empty caption and a transcript flag.
pub fn caption_frames(
    session: &mut Session<'_>,
    frames: &[Frame],
    fact: &FactStatement,
) -> Result<Vec<CaptionedFrame>, GroundingError> {
    if frames.is_empty() {
        return Err(GroundingError::EmptyVideo);
    }
    let mut out: Vec<CaptionedFrame> = Vec::with_capacity(frames.len());
    for frame in frames {
        let call_args = args([
            ("fact", fact.text.clone()),
            ("previous_captions", render_previous(&out)),
            ("frame_index", frame.index.to_string()),
            ("timestamp_s", format!("{:.2}", frame.timestamp_s)),
        ]);
        let caption = match session.complete("caption", call_args, vec![frame.attachment.clone()]) {
            Ok(text) => text.trim().to_string(),
            Err(e) => {
                log::warn!("caption failed for frame {}: {e}", frame.index);
                session.transcript_mut().flag_last("caption-failed");
                String::new()
            }
        };
        out.push(CaptionedFrame {
            frame_index: frame.index,
            timestamp_s: frame.timestamp_s,
            caption,
            triplets: Vec::new(),
        });
    }
    Ok(out)
}

/// Reads `subject | predicate | object` lines. Bullets, numbering and
/// surrounding parentheses are tolerated.
pub fn parse_triplet_lines(text: &str) -> Vec<SemanticTriplet> {
    text.lines()
        .filter_map(|line| {
            let line = line
                .trim()
                .trim_start_matches(|c: char| c == '-' || c == '*' || c.is_ascii_digit() || c == '.' || c == ')')
                .trim()
                .trim_start_matches('(')
                .trim_end_matches([')', ',', ';'])
                .trim();
            let parts: Vec<&str> = line.split('|').collect();
            match parts.as_slice() {
                [s, p] => SemanticTriplet::new(s, p, ""),
                [s, p, o] => SemanticTriplet::new(s, p, o),
                _ => None,
            }
        })
        .collect()
}

/// Structured semantics of a piece of text. Unreadable completions yield an
/// empty list and a `triplets-malformed` flag.
pub fn parse_triplets(
    session: &mut Session<'_>,
    text: &str,
) -> Result<Vec<SemanticTriplet>, GroundingError> {
    if text.trim().is_empty() {
        return Err(GroundingError::EmptyText);
    }
    match session.complete("triplets", args([("text", text)]), vec![]) {
        Ok(reply) => {
            let triplets = parse_triplet_lines(&reply);
            if triplets.is_empty() {
                session.transcript_mut().flag_last("triplets-malformed");
            }
            Ok(triplets)
        }
        Err(e) => {
            log::warn!("triplet parse failed: {e}");
            session.transcript_mut().flag_last("triplets-malformed");
            Ok(Vec::new())
        }
    }
}

fn render_triplets(triplets: &[SemanticTriplet]) -> String {
    triplets
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

fn words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// First integer in the text, e.g. `"frame 12"` → 12.
fn first_number(text: &str) -> Option<usize> {
    let digits: String = text
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().ok()
}

/// Deterministic anchor choice: most exact triplet-field matches with the fact,
/// then most shared caption words; ties go to the earliest frame.
pub fn overlap_anchor(captions: &[CaptionedFrame], fact: &FactStatement) -> Option<usize> {
    let fact_words = words(&fact.text);
    captions
        .iter()
        .filter(|c| !c.is_sentinel())
        .map(|c| {
            let triplet_score: usize = fact
                .triplets
                .iter()
                .map(|ft| c.triplets.iter().map(|t| ft.overlap(t)).max().unwrap_or(0))
                .sum();
            let word_score = words(&c.caption).intersection(&fact_words).count();
            (c.frame_index, (triplet_score, word_score))
        })
        .fold(None, |best: Option<(usize, (usize, usize))>, (idx, score)| match best {
            Some((_, b)) if b >= score => best,
            _ => Some((idx, score)),
        })
        .map(|(idx, _)| idx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorChoice {
    pub frame_index: usize,
    /// The overlap fallback picked the frame.
    pub fallback: bool,
}

/// Asks the retriever for the frame matching the fact. An answer naming a
/// frame that is not among the usable captions is retried once; after that the
/// overlap fallback decides.
pub fn retrieve_anchor(
    session: &mut Session<'_>,
    video_ref: &str,
    captions: &[CaptionedFrame],
    fact: &FactStatement,
) -> Result<AnchorChoice, GroundingError> {
    let usable: Vec<&CaptionedFrame> = captions.iter().filter(|c| !c.is_sentinel()).collect();
    if usable.is_empty() {
        return Err(GroundingError::NoUsableCaptions);
    }
    if let [only] = usable.as_slice() {
        return Ok(AnchorChoice {
            frame_index: only.frame_index,
            fallback: false,
        });
    }
    let frame_lines = usable
        .iter()
        .map(|c| {
            let body = if c.triplets.is_empty() {
                c.caption.clone()
            } else {
                render_triplets(&c.triplets)
            };
            format!("frame {}: {}", c.frame_index, body)
        })
        .collect::<Vec<_>>()
        .join("\n");
    let fact_lines = if fact.triplets.is_empty() {
        fact.text.clone()
    } else {
        render_triplets(&fact.triplets)
    };

    let mut note = String::new();
    for _attempt in 0..2 {
        let reply = session.complete(
            "retrieve",
            args([
                ("video", video_ref.to_string()),
                ("fact_triplets", fact_lines.clone()),
                ("frame_triplets", frame_lines.clone()),
                ("attempt_note", note.clone()),
            ]),
            vec![],
        );
        match reply {
            Ok(text) => {
                let pick = first_number(&text);
                if let Some(idx) = pick.filter(|i| usable.iter().any(|c| c.frame_index == *i)) {
                    return Ok(AnchorChoice {
                        frame_index: idx,
                        fallback: false,
                    });
                }
                session.transcript_mut().flag_last("invalid-frame-id");
                note = format!(
                    "Your previous answer \"{}\" does not name one of the listed frames.\n",
                    first_line(&text)
                );
            }
            Err(e) => {
                log::warn!("anchor retrieval failed: {e}");
                break;
            }
        }
    }
    session.transcript_mut().flag_last("retrieval-fallback");
    let frame_index = overlap_anchor(captions, fact).ok_or(GroundingError::NoUsableCaptions)?;
    Ok(AnchorChoice {
        frame_index,
        fallback: true,
    })
}

/// Reads a directive phrase; the earliest one mentioned wins.
pub fn parse_directive(text: &str) -> Option<NavigationDirective> {
    let lower = text.to_lowercase();
    [
        ("behind", NavigationDirective::LookBehind),
        ("ahead", NavigationDirective::LookAhead),
        ("around", NavigationDirective::LookAround),
    ]
    .into_iter()
    .filter_map(|(kw, d)| lower.find(kw).map(|pos| (pos, d)))
    .min_by_key(|(pos, _)| *pos)
    .map(|(_, d)| d)
}

/// Chooses where evidence lies relative to the anchor. Unreadable or failed
/// answers default to `LookAround`.
pub fn navigate(
    session: &mut Session<'_>,
    question: &str,
    question_type: QuestionType,
) -> Result<NavigationDirective, GroundingError> {
    if question.trim().is_empty() {
        return Err(GroundingError::EmptyQuestion);
    }
    let reply = session.complete(
        "navigate",
        args([("question", question), ("question_type", question_type.as_str())]),
        vec![],
    );
    let directive = match reply {
        Ok(text) => parse_directive(&text),
        Err(e) => {
            log::warn!("navigation failed: {e}");
            None
        }
    };
    Ok(directive.unwrap_or_else(|| {
        session.transcript_mut().flag_last("navigate-default");
        NavigationDirective::LookAround
    }))
}

/// Everything grounding produced for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact: Option<FactStatement>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub captions: Vec<CaptionedFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<AnchorChoice>,
    pub moment: GroundedMoment,
}

/// Runs fact extraction, captioning, triplet parsing, anchor retrieval and
/// navigation, then resolves the moment. Captions are read from and written
/// to `store` when one is given.
pub fn ground(
    session: &mut Session<'_>,
    video_ref: &str,
    question: &str,
    question_type: QuestionType,
    frames: &[Frame],
    window: usize,
    store: Option<&CaptionStore>,
) -> Result<Grounding, GroundingError> {
    if frames.is_empty() {
        return Err(GroundingError::EmptyVideo);
    }
    let mut fact = extract_fact(session, question)?;
    fact.triplets = parse_triplets(session, &fact.text)?;

    let cached = match store {
        Some(s) => s.load(video_ref, &fact.text).unwrap_or_else(|e| {
            log::warn!("ignoring caption store entry for {video_ref}: {e}");
            None
        }),
        None => None,
    };
    let captions = match cached {
        Some(file) if file.frames.len() == frames.len() => file.frames,
        _ => {
            let mut captions = caption_frames(session, frames, &fact)?;
            for c in captions.iter_mut().filter(|c| !c.is_sentinel()) {
                c.triplets = parse_triplets(session, &c.caption)?;
            }
            if let Some(s) = store {
                if let Err(e) = s.save(video_ref, &fact.text, &captions) {
                    log::warn!("could not store captions for {video_ref}: {e}");
                }
            }
            captions
        }
    };

    let anchor = retrieve_anchor(session, video_ref, &captions, &fact)?;
    let anchor_pos = frames
        .iter()
        .position(|f| f.index == anchor.frame_index)
        .ok_or(GroundingError::AnchorOutOfRange {
            anchor: anchor.frame_index,
            video_len: frames.len(),
        })?;
    let directive = navigate(session, question, question_type)?;
    let moment = ground_moment(anchor_pos, directive, frames.len(), window)?;
    Ok(Grounding {
        fact: Some(fact),
        captions,
        anchor: Some(anchor),
        moment,
    })
}

/// Maps a `[start_s, end_s]` interval onto sampled frame positions. Falls back
/// to the frame nearest the interval midpoint when no frame lies inside.
pub fn moment_from_seconds(
    frames: &[Frame],
    start_s: f64,
    end_s: f64,
) -> Result<GroundedMoment, GroundingError> {
    if frames.is_empty() {
        return Err(GroundingError::EmptyVideo);
    }
    let (lo, hi) = (start_s.min(end_s), start_s.max(end_s));
    let inside: Vec<usize> = frames
        .iter()
        .enumerate()
        .filter(|(_, f)| f.timestamp_s >= lo && f.timestamp_s <= hi)
        .map(|(i, _)| i)
        .collect();
    let (s, e) = match (inside.first(), inside.last()) {
        (Some(&s), Some(&e)) => (s, e),
        _ => {
            let mid = (lo + hi) / 2.0;
            let nearest = frames
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    (a.1.timestamp_s - mid)
                        .abs()
                        .total_cmp(&(b.1.timestamp_s - mid).abs())
                })
                .map(|(i, _)| i)
                .unwrap();
            (nearest, nearest)
        }
    };
    GroundedMoment::external(s, e, frames.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{BackendError, FnBackend, ModelRequest, ModelResponse, ProviderSet};
    use std::sync::Arc;

    fn frames(n: usize) -> Vec<Frame> {
        (0..n)
            .map(|i| Frame {
                index: i,
                timestamp_s: i as f64 * 0.5,
                attachment: Attachment::named(format!("test://v/{i}")),
            })
            .collect()
    }

    fn set_with<F>(f: F) -> ProviderSet
    where
        F: Fn(&ModelRequest) -> Result<ModelResponse, BackendError> + Send + Sync + 'static,
    {
        ProviderSet::builder()
            .default_backend(Arc::new(FnBackend::new("scripted", f)))
            .build()
    }

    fn captioned(idx: usize, caption: &str, triplets: &[(&str, &str, &str)]) -> CaptionedFrame {
        CaptionedFrame {
            frame_index: idx,
            timestamp_s: idx as f64,
            caption: caption.into(),
            triplets: triplets
                .iter()
                .map(|(s, p, o)| SemanticTriplet::new(s, p, o).unwrap())
                .collect(),
        }
    }

    #[test]
    fn fact_is_cleaned_and_falls_back() {
        let set = set_with(|r| {
            if r.arg("question").contains("balloon") {
                Ok(ModelResponse::text("Fact: \"the boy in white first took the balloon.\"\n"))
            } else {
                Ok(ModelResponse::text(" "))
            }
        });
        let mut s = set.session();
        let f = extract_fact(&mut s, "What did the boy in white do after he first took the balloon?").unwrap();
        assert_eq!(f.text, "the boy in white first took the balloon");
        let f = extract_fact(&mut s, "Why is the baby happy?").unwrap();
        assert_eq!(f.text, "Why is the baby happy");
        assert!(s.transcript().has_flag("fact-fallback"));
        assert!(matches!(extract_fact(&mut s, ""), Err(GroundingError::EmptyQuestion)));
    }

    #[test]
    fn caption_context_grows_by_one_per_frame() {
        let set = set_with(|r| Ok(ModelResponse::text(format!("caption {}", r.arg("frame_index")))));
        let mut s = set.session();
        let fact = FactStatement {
            text: "the dog barks".into(),
            triplets: vec![],
        };
        let caps = caption_frames(&mut s, &frames(5), &fact).unwrap();
        assert_eq!(caps.len(), 5);
        for (i, e) in s.transcript().entries().iter().enumerate() {
            let prev = &e.args["previous_captions"];
            let n = if i == 0 { 0 } else { prev.lines().count() };
            assert_eq!(n, i, "request {i}");
            assert!(e.prompt.contains("the dog barks"));
            assert_eq!(e.attachments, vec![format!("test://v/{i}")]);
        }
        assert_eq!(s.transcript().entries()[0].args["previous_captions"], "(none)");
    }

    #[test]
    fn failed_caption_becomes_sentinel() {
        let set = set_with(|r| {
            if r.arg("frame_index") == "1" {
                Err(BackendError::Rejected { status: 400, body: "no".into() })
            } else {
                Ok(ModelResponse::text("the cat sleeps"))
            }
        });
        let mut s = set.session();
        let fact = FactStatement { text: "x".into(), triplets: vec![] };
        let caps = caption_frames(&mut s, &frames(3), &fact).unwrap();
        assert!(caps[1].is_sentinel());
        assert!(!caps[2].is_sentinel());
        assert!(s.transcript().has_flag("caption-failed"));
        assert!(s.transcript().entries()[2].args["previous_captions"].contains("[unavailable]"));
    }

    #[test]
    fn triplet_lines_parse() {
        let t = parse_triplet_lines("1. (boy | holds | balloon)\n- girl | runs |\nnonsense\n(dog|barks)");
        assert_eq!(
            t,
            vec![
                SemanticTriplet::new("boy", "holds", "balloon").unwrap(),
                SemanticTriplet::new("girl", "runs", "").unwrap(),
                SemanticTriplet::new("dog", "barks", "").unwrap(),
            ]
        );
    }

    #[test]
    fn malformed_triplets_flagged() {
        let set = set_with(|_| Ok(ModelResponse::text("I don't know")));
        let mut s = set.session();
        assert!(parse_triplets(&mut s, "the boy holds a balloon").unwrap().is_empty());
        assert!(s.transcript().has_flag("triplets-malformed"));
        assert!(matches!(parse_triplets(&mut s, " "), Err(GroundingError::EmptyText)));
    }

    #[test]
    fn single_frame_needs_no_retrieval() {
        let set = set_with(|_| panic!("no call expected"));
        let mut s = set.session();
        let caps = vec![captioned(0, "a dog", &[])];
        let fact = FactStatement { text: "x".into(), triplets: vec![] };
        assert_eq!(retrieve_anchor(&mut s, "v", &caps, &fact).unwrap().frame_index, 0);
    }

    #[test]
    fn out_of_range_answer_retries_then_falls_back() {
        let set = set_with(|_| Ok(ModelResponse::text("frame 99")));
        let mut s = set.session();
        let caps = vec![
            captioned(0, "the girl opens the door", &[("girl", "opens", "door")]),
            captioned(1, "the boy kicks the ball", &[("boy", "kicks", "ball")]),
            captioned(2, "the boy holds the ball", &[("boy", "holds", "ball")]),
        ];
        let fact = FactStatement {
            text: "the boy kicks the ball".into(),
            triplets: vec![SemanticTriplet::new("boy", "kicks", "ball").unwrap()],
        };
        let got = retrieve_anchor(&mut s, "v", &caps, &fact).unwrap();
        assert_eq!(got, AnchorChoice { frame_index: 1, fallback: true });
        assert_eq!(s.transcript().template_count("retrieve"), 2);
        assert!(s.transcript().entries()[1].prompt.contains("frame 99"));
        assert!(s.transcript().has_flag("retrieval-fallback"));
    }

    #[test]
    fn sentinel_frames_are_not_valid_answers() {
        let set = set_with(|_| Ok(ModelResponse::text("frame 1")));
        let mut s = set.session();
        let caps = vec![
            captioned(0, "the boy kicks the ball", &[("boy", "kicks", "ball")]),
            captioned(1, "", &[]),
            captioned(2, "the cat sleeps", &[("cat", "sleeps", "")]),
        ];
        let fact = FactStatement {
            text: "the boy kicks".into(),
            triplets: vec![SemanticTriplet::new("boy", "kicks", "ball").unwrap()],
        };
        let got = retrieve_anchor(&mut s, "v", &caps, &fact).unwrap();
        assert_eq!(got.frame_index, 0);
        assert!(got.fallback);
    }

    #[test]
    fn overlap_ties_go_to_earliest() {
        let caps = vec![
            captioned(3, "a", &[("boy", "runs", "")]),
            captioned(5, "b", &[("boy", "runs", "")]),
        ];
        let fact = FactStatement {
            text: "zzz".into(),
            triplets: vec![SemanticTriplet::new("boy", "runs", "").unwrap()],
        };
        assert_eq!(overlap_anchor(&caps, &fact), Some(3));
    }

    #[test]
    fn directive_parsing_and_default() {
        assert_eq!(parse_directive("Look Behind."), Some(NavigationDirective::LookBehind));
        assert_eq!(parse_directive("look ahead, not around"), Some(NavigationDirective::LookAhead));
        assert_eq!(parse_directive("no idea"), None);
        let set = set_with(|_| Ok(ModelResponse::text("sideways")));
        let mut s = set.session();
        assert_eq!(
            navigate(&mut s, "Why did the boy cry?", QuestionType::Causal).unwrap(),
            NavigationDirective::LookAround
        );
        assert!(s.transcript().has_flag("navigate-default"));
    }

    #[test]
    fn seconds_interval_maps_to_frames() {
        let f = frames(10); // 0.0, 0.5, ... 4.5
        let m = moment_from_seconds(&f, 1.0, 2.0).unwrap();
        assert_eq!((m.start_index, m.end_index), (2, 4));
        assert_eq!(m.origin, MomentOrigin::GroundTruth);
        let m = moment_from_seconds(&f, 1.1, 1.2).unwrap();
        assert_eq!((m.start_index, m.end_index), (2, 2));
    }

    proptest::proptest! {
        #[test]
        fn retrieval_is_total(reply in ".{0,40}", n in 2usize..30) {
            let reply2 = reply.clone();
            let set = set_with(move |_| Ok(ModelResponse::text(reply2.clone())));
            let mut s = set.session();
            let caps: Vec<CaptionedFrame> = (0..n)
                .map(|i| captioned(i, &format!("thing {i} happens"), &[]))
                .collect();
            let fact = FactStatement { text: "thing happens".into(), triplets: vec![] };
            let got = retrieve_anchor(&mut s, "v", &caps, &fact).unwrap();
            proptest::prop_assert!(got.frame_index < n);
        }
    }
}
