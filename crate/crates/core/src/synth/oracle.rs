//! Deterministic stand-ins for every provider role, answering from the
//! synthetic world a request refers to.
//!
//! The world is found through the `video` argument or the `synth://<seed>/<frame>`
//! URIs of attached frames.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use super::grammar::{lemma, parse_clause, render_event, split_clauses, triplet_of, Tense, RELATIONS};
use super::{generate_world, parse_video_ref, WorldParams, WorldSpec};
use crate::grounding::{parse_triplet_lines, Frame, GroundingError, VideoSource};
use crate::providers::{Attachment, Backend, BackendError, ModelRequest, ModelResponse, TokenDistribution};

pub fn frame_uri(seed: u64, frame: usize) -> String {
    format!("synth://{seed}/{frame}")
}

fn parse_frame_uri(uri: &str) -> Option<(u64, usize)> {
    let (seed, frame) = uri.strip_prefix("synth://")?.split_once('/')?;
    Some((seed.parse().ok()?, frame.parse().ok()?))
}

/// Frames of `synth:<seed>` videos.
pub struct SynthSource {
    pub params: WorldParams,
}

impl VideoSource for SynthSource {
    fn frames(&self, video_ref: &str) -> Result<Vec<Frame>, GroundingError> {
        let seed = parse_video_ref(video_ref)
            .ok_or_else(|| GroundingError::Store(format!("{video_ref} is not a synthetic video")))?;
        Ok((0..self.params.num_frames)
            .map(|i| Frame {
                index: i,
                timestamp_s: i as f64,
                attachment: Attachment::named(frame_uri(seed, i)),
            })
            .collect())
    }
}

pub struct WorldOracle {
    params: WorldParams,
    /// Maximum jitter applied to prover scores; 0 gives exact 0/1 scores.
    noise: f64,
    worlds: Mutex<HashMap<u64, Arc<WorldSpec>>>,
}

impl WorldOracle {
    pub fn new(params: WorldParams, noise: f64) -> Self {
        WorldOracle {
            params,
            noise: noise.clamp(0.0, 1.0),
            worlds: Mutex::new(HashMap::new()),
        }
    }

    fn world(&self, seed: u64) -> Result<Arc<WorldSpec>, BackendError> {
        let mut worlds = self.worlds.lock().unwrap();
        if let Some(w) = worlds.get(&seed) {
            return Ok(w.clone());
        }
        let w = Arc::new(generate_world(seed, &self.params).map_err(|e| BackendError::Malformed(e.to_string()))?);
        worlds.insert(seed, w.clone());
        Ok(w)
    }

    fn world_of_attachment(&self, request: &ModelRequest) -> Result<(Arc<WorldSpec>, usize), BackendError> {
        let (seed, frame) = request
            .attachments
            .first()
            .and_then(|a| parse_frame_uri(&a.uri))
            .ok_or_else(|| BackendError::Rejected {
                status: 400,
                body: "no synthetic frame attached".into(),
            })?;
        Ok((self.world(seed)?, frame))
    }

    /// 1 when every clause of the statement is an event inside
    /// `[moment_start, moment_end]`, else 0.
    pub fn truth(world: &WorldSpec, statement: &str, start: usize, end: usize) -> bool {
        let clauses = split_clauses(split_view(statement).0);
        !clauses.is_empty()
            && clauses.iter().all(|c| {
                parse_clause(c)
                    .and_then(|(a, v, o)| world.find(&a, &v, &o))
                    .is_some_and(|e| (start..=end).contains(&e.frame))
            })
    }

    fn jitter(&self, seed: u64, statement: &str, start: usize, end: usize) -> f64 {
        if self.noise == 0.0 {
            return 0.0;
        }
        let digest = Sha256::new()
            .chain_update(seed.to_le_bytes())
            .chain_update(statement.as_bytes())
            .chain_update(start.to_le_bytes())
            .chain_update(end.to_le_bytes())
            .finalize();
        let x = u64::from_le_bytes(digest[..8].try_into().unwrap());
        (x as f64 / u64::MAX as f64) * self.noise
    }

    fn verify(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let (world, _) = self.world_of_attachment(request)?;
        let num = |k: &str| {
            request.arg(k).parse::<usize>().map_err(|_| BackendError::Rejected {
                status: 400,
                body: format!("bad {k}"),
            })
        };
        let (start, end) = (num("moment_start")?, num("moment_end")?);
        let statement = request.arg("statement");
        let j = self.jitter(world.seed, statement, start, end);
        let p = if Self::truth(&world, statement, start, end) { 1.0 - j } else { j };
        Ok(ModelResponse {
            text: if p >= 0.5 { "True" } else { "False" }.into(),
            distribution: Some(TokenDistribution::from_probs([("True", p), ("False", 1.0 - p)])),
        })
    }

    fn retrieve(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let seed = parse_video_ref(request.arg("video")).ok_or_else(|| BackendError::Rejected {
            status: 400,
            body: "unknown video".into(),
        })?;
        let world = self.world(seed)?;
        let triplets = parse_triplet_lines(&request.arg("fact_triplets").replace(';', "\n"));
        let hit = triplets.iter().find_map(|t| {
            world.find(&t.subject.to_lowercase(), lemma(&t.predicate.to_lowercase()), &t.object.to_lowercase())
        });
        Ok(ModelResponse::text(match hit {
            Some(e) => format!("frame {}", e.frame),
            None => "the fact does not appear".to_string(),
        }))
    }
}

/// `("x, view 5", ...)` → `("x", 5)`; unsuffixed statements are view 1.
fn split_view(statement: &str) -> (&str, u64) {
    match statement.rsplit_once(", view ") {
        Some((base, n)) => match n.trim().parse() {
            Ok(n) => (base, n),
            Err(_) => (statement, 1),
        },
        None => (statement, 1),
    }
}

fn question_body(question: &str) -> String {
    question.trim().trim_end_matches('?').trim().to_string()
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    (s.len() >= prefix.len() && s[..prefix.len()].eq_ignore_ascii_case(prefix)).then(|| &s[prefix.len()..])
}

/// The clause after `after` / `before` in "What happened after X" or
/// "What did S do before X".
fn temporal_clause(q: &str) -> Option<(&'static str, &str)> {
    let lower = q.to_lowercase();
    if !(lower.starts_with("what happened") || lower.starts_with("what did")) {
        return None;
    }
    [" after ", " before "]
        .into_iter()
        .filter_map(|rel| lower.find(rel).map(|pos| (rel, pos)))
        .min_by_key(|(_, pos)| *pos)
        .map(|(rel, pos)| (rel.trim(), q[pos + rel.len()..].trim()))
}

pub(crate) fn oracle_fact(question: &str) -> String {
    let q = question_body(question);
    if let Some((_, clause)) = temporal_clause(&q) {
        return clause.to_string();
    }
    if let Some(rest) = strip_prefix_ci(&q, "why did ") {
        return match parse_clause(rest) {
            Some((a, v, o)) => render_event(&a, &v, &o, Tense::Past),
            None => rest.to_string(),
        };
    }
    if let Some(rest) = strip_prefix_ci(&q, "why is ") {
        if let Some((subject, adjective)) = rest.rsplit_once(' ') {
            return format!("{subject} is {adjective}");
        }
    }
    String::new()
}

pub(crate) fn oracle_declarative(question: &str, option: &str) -> String {
    let q = question_body(question);
    let option = option.trim().trim_end_matches('.');
    if let Some((rel, clause)) = temporal_clause(&q) {
        return format!("{option} {rel} {clause}");
    }
    if let Some((a, v, o)) = strip_prefix_ci(&q, "why did ").and_then(parse_clause) {
        return format!("{} because {option}", render_event(&a, &v, &o, Tense::Present));
    }
    format!("{q} {option}")
}

pub(crate) fn oracle_decompose(statement: &str) -> (String, String) {
    let (base, n) = split_view(statement.trim());
    let split_and = |s: &str| s.split_once(" and ").map(|(a, b)| (a.trim().to_string(), b.trim().to_string()));
    let relation = RELATIONS
        .iter()
        .filter_map(|r| base.find(r).map(|pos| (pos, *r)))
        .min_by_key(|(pos, _)| *pos);
    if let Some((pos, rel)) = relation {
        let (left, right) = (&base[..pos], &base[pos + rel.len()..]);
        return match split_and(left) {
            Some((a, b)) => (format!("{a}{rel}{right}"), format!("{b}{rel}{right}")),
            None => (left.trim().to_string(), right.trim().to_string()),
        };
    }
    if let Some(pair) = split_and(base) {
        return pair;
    }
    (format!("{base}, view {}", 2 * n), format!("{base}, view {}", 2 * n + 1))
}

fn oracle_navigate(question: &str) -> &'static str {
    let q = format!(" {} ", question.to_lowercase());
    if q.contains(" after ") {
        "look behind"
    } else if q.contains(" before ") {
        "look ahead"
    } else {
        "look around"
    }
}

fn oracle_triplets(text: &str) -> String {
    let lines: Vec<String> = split_clauses(text)
        .iter()
        .filter_map(|c| triplet_of(c))
        .map(|(s, p, o)| format!("{s} | {p} | {o}"))
        .collect();
    if lines.is_empty() {
        "no triplets".to_string()
    } else {
        lines.join("\n")
    }
}

impl Backend for WorldOracle {
    fn model_id(&self) -> &str {
        "oracle-world"
    }

    fn call(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let text = match request.template.as_str() {
            "fact" => oracle_fact(request.arg("question")),
            "caption" => {
                let (world, frame) = self.world_of_attachment(request)?;
                world.caption(frame)
            }
            "triplets" => oracle_triplets(request.arg("text")),
            "retrieve" => return self.retrieve(request),
            "navigate" => oracle_navigate(request.arg("question")).to_string(),
            "declarative" => oracle_declarative(request.arg("question"), request.arg("option")),
            "decompose" => {
                let (a, b) = oracle_decompose(request.arg("statement"));
                format!("1. {a}\n2. {b}")
            }
            "verify" => return self.verify(request),
            other => {
                return Err(BackendError::Rejected {
                    status: 400,
                    body: format!("world oracle has no answer for {other}"),
                })
            }
        };
        Ok(ModelResponse::text(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Event;

    fn world() -> WorldSpec {
        WorldSpec {
            seed: 1,
            num_frames: 24,
            events: vec![
                Event { frame: 3, actor: "girl", action: "open", object: "door" },
                Event { frame: 10, actor: "boy", action: "kick", object: "ball" },
                Event { frame: 15, actor: "dog", action: "pull", object: "box" },
            ],
        }
    }

    #[test]
    fn membership_proof() {
        let w = world();
        assert!(WorldOracle::truth(&w, "the dog pulls the box", 10, 23));
        assert!(!WorldOracle::truth(&w, "the girl opens the door", 10, 23));
        assert!(WorldOracle::truth(&w, "the dog pulls the box after the boy kicked the ball", 10, 23));
        assert!(!WorldOracle::truth(&w, "the dog pulls the box after the girl opened the door", 10, 23));
        assert!(WorldOracle::truth(&w, "the dog pulls the box, view 6", 10, 23));
        assert!(!WorldOracle::truth(&w, "the chef drops the cup", 0, 23));
        assert!(!WorldOracle::truth(&w, "nonsense", 0, 23));
    }

    #[test]
    fn facts() {
        assert_eq!(oracle_fact("What happened after the boy kicked the ball?"), "the boy kicked the ball");
        assert_eq!(oracle_fact("What did the boy in white do after he first took the balloon?"), "he first took the balloon");
        assert_eq!(oracle_fact("Why did the boy kick the ball?"), "the boy kicked the ball");
        assert_eq!(oracle_fact("Why is the baby happy?"), "the baby is happy");
        assert_eq!(oracle_fact("How many dogs?"), "");
    }

    #[test]
    fn declaratives() {
        assert_eq!(
            oracle_declarative("What happened before the boy kicked the ball?", "the girl opens the door"),
            "the girl opens the door before the boy kicked the ball"
        );
        assert_eq!(
            oracle_declarative("Why did the boy kick the ball?", "the dog pulls the box"),
            "the boy kicks the ball because the dog pulls the box"
        );
        assert_eq!(oracle_declarative("How many dogs?", "two"), "How many dogs two");
    }

    #[test]
    fn decomposition() {
        assert_eq!(
            oracle_decompose("A and B after E"),
            ("A after E".to_string(), "B after E".to_string())
        );
        assert_eq!(oracle_decompose("X after E"), ("X".to_string(), "E".to_string()));
        assert_eq!(oracle_decompose("A and B"), ("A".to_string(), "B".to_string()));
        assert_eq!(oracle_decompose("X"), ("X, view 2".to_string(), "X, view 3".to_string()));
        assert_eq!(oracle_decompose("X, view 3"), ("X, view 6".to_string(), "X, view 7".to_string()));
    }

    #[test]
    fn triplets_and_navigation() {
        assert_eq!(oracle_triplets("the boy holds a balloon"), "boy | hold | balloon");
        assert_eq!(
            oracle_triplets("the boy holds the balloon and the girl opens the door"),
            "boy | hold | balloon\ngirl | open | door"
        );
        assert_eq!(oracle_navigate("What happened after he left?"), "look behind");
        assert_eq!(oracle_navigate("What happened before the dog barked?"), "look ahead");
        assert_eq!(oracle_navigate("Why did the boy cry?"), "look around");
    }

    #[test]
    fn noise_is_bounded_and_deterministic() {
        let o = WorldOracle::new(WorldParams::default(), 0.2);
        let a = o.jitter(1, "s", 0, 5);
        assert_eq!(a, o.jitter(1, "s", 0, 5));
        assert!((0.0..=0.2).contains(&a));
        assert_ne!(a, o.jitter(1, "t", 0, 5));
    }
}
