//! Seeded toy "videos": one event per frame at most, with question tasks and
//! oracle backends that answer every provider role from the world itself.

mod bias;
mod grammar;
mod oracle;

pub use bias::{bias_suite, LexicalBiasOracle, TemplateRewriter};
pub use grammar::{lemma, parse_clause, render_event, split_clauses, Tense, ACTIONS, ACTORS, OBJECTS};
pub use oracle::{SynthSource, WorldOracle};

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounding::{ground_moment, NavigationDirective};
use crate::qa::{Dataset, DatasetVariant, QaTask, QuestionType};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("world {seed} has no usable anchor for a {relation} task")]
    Ungeneratable { seed: u64, relation: Relation },
    #[error("invalid world parameters: {0}")]
    Params(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Event {
    pub frame: usize,
    pub actor: &'static str,
    pub action: &'static str,
    pub object: &'static str,
}

impl Event {
    pub fn present(&self) -> String {
        render_event(self.actor, self.action, self.object, Tense::Present)
    }

    pub fn past(&self) -> String {
        render_event(self.actor, self.action, self.object, Tense::Past)
    }

    fn key(&self) -> (&'static str, &'static str, &'static str) {
        (self.actor, self.action, self.object)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub num_frames: usize,
    pub min_events: usize,
    pub max_events: usize,
    pub options: usize,
    pub look_around_window: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            num_frames: 24,
            min_events: 8,
            max_events: 12,
            options: 5,
            look_around_window: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub num_frames: usize,
    /// Sorted by frame.
    pub events: Vec<Event>,
}

pub fn video_ref(seed: u64) -> String {
    format!("synth:{seed}")
}

pub fn parse_video_ref(video_ref: &str) -> Option<u64> {
    video_ref.strip_prefix("synth:")?.parse().ok()
}

impl WorldSpec {
    pub fn event_at(&self, frame: usize) -> Option<&Event> {
        self.events.iter().find(|e| e.frame == frame)
    }

    /// The event a clause describes, if it happens in this world.
    pub fn find(&self, actor: &str, action: &str, object: &str) -> Option<&Event> {
        self.events
            .iter()
            .find(|e| e.actor == actor && e.action == action && e.object == object)
    }

    pub fn caption(&self, frame: usize) -> String {
        self.event_at(frame)
            .map(Event::present)
            .unwrap_or_else(|| "the room is quiet".to_string())
    }
}

pub fn generate_world(seed: u64, params: &WorldParams) -> Result<WorldSpec, SynthError> {
    let WorldParams {
        num_frames,
        min_events,
        max_events,
        ..
    } = *params;
    if min_events < 3 || min_events > max_events || max_events > num_frames {
        return Err(SynthError::Params(format!(
            "need 3 <= min_events <= max_events <= num_frames, got {min_events}, {max_events}, {num_frames}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(min_events..=max_events);
    let mut frames = rand::seq::index::sample(&mut rng, num_frames, n).into_vec();
    frames.sort_unstable();
    let mut events: Vec<Event> = Vec::with_capacity(n);
    for frame in frames {
        loop {
            let e = Event {
                frame,
                actor: ACTORS.choose(&mut rng).copied().unwrap(),
                action: ACTIONS.choose(&mut rng).unwrap().0,
                object: OBJECTS.choose(&mut rng).copied().unwrap(),
            };
            if events.iter().all(|x| x.key() != e.key()) {
                events.push(e);
                break;
            }
        }
    }
    Ok(WorldSpec {
        seed,
        num_frames,
        events,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Before,
    After,
    Around,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::After, Relation::Before, Relation::Around];

    pub fn directive(self) -> NavigationDirective {
        match self {
            Relation::After => NavigationDirective::LookBehind,
            Relation::Before => NavigationDirective::LookAhead,
            Relation::Around => NavigationDirective::LookAround,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Before => "before",
            Relation::After => "after",
            Relation::Around => "around",
        })
    }
}

fn window_of(world: &WorldSpec, anchor: usize, relation: Relation, window: usize) -> (usize, usize) {
    let m = ground_moment(anchor, relation.directive(), world.num_frames, window)
        .expect("anchor is an event frame");
    (m.start_index, m.end_index)
}

/// Builds a question about an anchor event.
///
/// The correct option is an event inside the relation's window. Distractors
/// are real events outside that window when `adversarial`, so only grounded
/// evidence separates them; otherwise they are actor/action/object
/// combinations that never happen in the world.
pub fn generate_task(
    world: &WorldSpec,
    relation: Relation,
    adversarial: bool,
    params: &WorldParams,
    task_seed: u64,
) -> Result<QaTask, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed ^ world.seed.rotate_left(17));
    let distractors_needed = params.options.saturating_sub(1);
    let window = params.look_around_window;
    let ungeneratable = SynthError::Ungeneratable {
        seed: world.seed,
        relation,
    };

    let candidates: Vec<(&Event, Vec<&Event>, Vec<&Event>)> = world
        .events
        .iter()
        .map(|anchor| {
            let (s, e) = window_of(world, anchor.frame, relation, window);
            let (inside, outside): (Vec<&Event>, Vec<&Event>) = world
                .events
                .iter()
                .filter(|x| x.frame != anchor.frame)
                .partition(|x| (s..=e).contains(&x.frame));
            (anchor, inside, outside)
        })
        .filter(|(_, inside, outside)| {
            !inside.is_empty() && (!adversarial || outside.len() >= distractors_needed)
        })
        .collect();
    let (anchor, inside, outside) = candidates.choose(&mut rng).ok_or(ungeneratable)?;
    let answer = **inside.choose(&mut rng).unwrap();

    let distractors: Vec<String> = if adversarial {
        outside
            .choose_multiple(&mut rng, distractors_needed)
            .map(|e| e.present())
            .collect()
    } else {
        let mut out: Vec<String> = Vec::new();
        while out.len() < distractors_needed {
            let (actor, action, object) = (
                *ACTORS.choose(&mut rng).unwrap(),
                ACTIONS.choose(&mut rng).unwrap().0,
                *OBJECTS.choose(&mut rng).unwrap(),
            );
            let text = render_event(actor, action, object, Tense::Present);
            if world.find(actor, action, object).is_none() && !out.contains(&text) {
                out.push(text);
            }
        }
        out
    };

    let gt = rng.gen_range(0..params.options.max(1));
    let mut options = distractors;
    options.insert(gt, answer.present());

    let question = match relation {
        Relation::After => format!("What happened after {}?", anchor.past()),
        Relation::Before => format!("What happened before {}?", anchor.past()),
        Relation::Around => format!(
            "Why did {}?",
            render_event(anchor.actor, anchor.action, anchor.object, Tense::Base)
        ),
    };
    let qtype = match relation {
        Relation::Around => QuestionType::Causal,
        _ => QuestionType::Temporal,
    };
    let mut task = QaTask::new(
        format!("synth-{}-{relation}-{task_seed}", world.seed),
        video_ref(world.seed),
        question,
        options,
        Some(gt),
        qtype,
    );
    let (s, e) = window_of(world, anchor.frame, relation, window);
    for (k, v) in [
        ("relation", serde_json::json!(relation.to_string())),
        ("adversarial", serde_json::json!(adversarial)),
        ("anchor_frame", serde_json::json!(anchor.frame)),
        ("answer_frame", serde_json::json!(answer.frame)),
        ("evidence_s", serde_json::json!([s as f64, e as f64])),
    ] {
        task.extra.insert(k.to_string(), v);
    }
    Ok(task)
}

/// A generated task set and the worlds behind it.
#[derive(Clone, Debug)]
pub struct Suite {
    pub worlds: BTreeMap<u64, WorldSpec>,
    pub dataset: Dataset,
    /// Worlds skipped because no task of the requested kind fit.
    pub resamples: usize,
}

impl Suite {
    /// `task id -> [start_s, end_s]` of the evidence window each task was
    /// built around (frame index = seconds in synthetic videos).
    pub fn intervals(&self) -> BTreeMap<String, (f64, f64)> {
        self.dataset
            .tasks
            .iter()
            .filter_map(|t| {
                let v = t.extra.get("evidence_s")?.as_array()?;
                Some((t.id.clone(), (v.first()?.as_f64()?, v.get(1)?.as_f64()?)))
            })
            .collect()
    }
}

/// `n` tasks cycling through the three relations, one world per task.
pub fn generate_suite(base_seed: u64, n: usize, adversarial: bool, params: &WorldParams) -> Result<Suite, SynthError> {
    let mut seeds = ChaCha8Rng::seed_from_u64(base_seed);
    let mut worlds = BTreeMap::new();
    let mut tasks = Vec::with_capacity(n);
    let mut resamples = 0;
    while tasks.len() < n {
        let relation = Relation::ALL[tasks.len() % 3];
        let seed: u64 = seeds.gen_range(0..1u64 << 40);
        let world = generate_world(seed, params)?;
        match generate_task(&world, relation, adversarial, params, tasks.len() as u64) {
            Ok(task) => {
                tasks.push(task);
                worlds.insert(seed, world);
            }
            Err(SynthError::Ungeneratable { .. }) => resamples += 1,
            Err(e) => return Err(e),
        }
        if resamples > 100 * n.max(1) {
            return Err(SynthError::Params("too many ungeneratable worlds".into()));
        }
    }
    let name = if adversarial { "synth-adversarial" } else { "synth" };
    Ok(Suite {
        worlds,
        dataset: Dataset {
            name: name.to_string(),
            tasks,
            variant: DatasetVariant::Original,
        },
        resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qa::validate_task;

    #[test]
    fn world_is_reproducible() {
        let p = WorldParams::default();
        let a = generate_world(7, &p).unwrap();
        assert_eq!(a, generate_world(7, &p).unwrap());
        assert_ne!(a, generate_world(8, &p).unwrap());
        assert!(a.events.iter().all(|e| e.frame < 24));
        assert!(a.events.windows(2).all(|w| w[0].frame < w[1].frame));
        assert!(a.events.len() >= 3);
    }

    #[test]
    fn world_json_shape() {
        let w = generate_world(1, &WorldParams::default()).unwrap();
        let v = serde_json::to_value(&w).unwrap();
        assert_eq!(v["seed"], 1);
        assert_eq!(v["num_frames"], 24);
        assert!(v["events"][0]["actor"].is_string());
        assert!(v["events"][0]["frame"].is_u64());
    }

    #[test]
    fn tasks_follow_their_relation() {
        let p = WorldParams::default();
        for seed in 0..60u64 {
            let w = generate_world(seed, &p).unwrap();
            for rel in Relation::ALL {
                for adversarial in [false, true] {
                    let Ok(t) = generate_task(&w, rel, adversarial, &p, seed) else { continue };
                    assert!(validate_task(&t).is_empty(), "{t:?}");
                    let anchor = t.extra["anchor_frame"].as_u64().unwrap() as usize;
                    let answer = t.extra["answer_frame"].as_u64().unwrap() as usize;
                    let (s, e) = window_of(&w, anchor, rel, 8);
                    assert!((s..=e).contains(&answer));
                    match rel {
                        Relation::After => assert!(answer > anchor),
                        Relation::Before => assert!(answer < anchor),
                        Relation::Around => assert!(answer.abs_diff(anchor) < 8),
                    }
                    let gt = t.ground_truth_index.unwrap();
                    for (i, o) in t.options.iter().enumerate().filter(|(i, _)| *i != gt) {
                        let (a, v, obj) = parse_clause(&o.text).unwrap();
                        let ev = w.find(&a, &v, &obj);
                        if adversarial {
                            let ev = ev.unwrap_or_else(|| panic!("option {i} is not an event"));
                            assert!(!(s..=e).contains(&ev.frame));
                        } else {
                            assert!(ev.is_none());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let p = WorldParams::default();
        let a = generate_suite(3, 30, true, &p).unwrap();
        let b = generate_suite(3, 30, true, &p).unwrap();
        assert_eq!(a.dataset.tasks, b.dataset.tasks);
        assert_eq!(a.dataset.tasks.len(), 30);
        assert_eq!(a.intervals().len(), 30);
    }
}
