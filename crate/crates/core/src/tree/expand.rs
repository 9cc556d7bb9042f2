//! Recursive decomposition with greedy pruning, and the per-task driver.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    backtrace, proof_score, select_answer, EntailmentForest, NodeId, NodeStatus, PrunedChild,
    PrunedRecord, ScoreCard, Statement, StatementOrigin, TreeError,
};
use crate::grounding::{
    ground, moment_from_seconds, CaptionStore, Frame, GroundedMoment, GroundingMode, VideoSource,
};
use crate::providers::{args, prove, ProverKind, ProviderError, ProviderSet, Session, Transcript};
use crate::qa::{validate_task, QaTask};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expansion {
    /// Prune a decomposition when its children cannot beat the parent.
    #[default]
    Dynamic,
    /// Expand every node down to max depth.
    Static,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: u32,
    pub expansion: Expansion,
    /// Extra attempts when a decomposition or declarative rewrite is unusable.
    pub format_retries: u32,
    pub prover: ProverKind,
    pub look_around_window: usize,
    pub grounding_mode: GroundingMode,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 5,
            expansion: Expansion::Dynamic,
            format_retries: 2,
            prover: ProverKind::default(),
            look_around_window: 8,
            grounding_mode: GroundingMode::Grounded,
        }
    }
}

/// The three model operations tree expansion needs.
pub trait Reasoner {
    fn root_statement(&mut self, question: &str, option: &str) -> Result<String, TreeError>;
    fn decompose(&mut self, statement: &str) -> Result<(String, String), TreeError>;
    fn direct_score(&mut self, statement: &str) -> Result<f64, TreeError>;
}

fn strip_marker(line: &str) -> &str {
    let line = line.trim();
    let line = line
        .strip_prefix("Sub-statement")
        .or_else(|| line.strip_prefix("sub-statement"))
        .unwrap_or(line)
        .trim_start();
    let rest = line.trim_start_matches(|c: char| c.is_ascii_digit());
    let rest = if rest.len() < line.len() {
        rest.trim_start_matches(['.', ')', ':'])
    } else {
        rest.trim_start_matches(['-', '*'])
    };
    rest.trim()
}

fn norm(s: &str) -> String {
    s.trim().trim_end_matches('.').to_lowercase()
}

/// Reads exactly two usable sub-statements out of a decomposition answer.
pub fn parse_two_statements(text: &str, parent: &str) -> Result<(String, String), String> {
    let items: Vec<String> = text
        .lines()
        .map(strip_marker)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let [a, b] = items.as_slice() else {
        return Err(format!("expected 2 sub-statements, got {}", items.len()));
    };
    if norm(a) == norm(b) {
        return Err("sub-statements are identical".into());
    }
    if norm(a) == norm(parent) || norm(b) == norm(parent) {
        return Err("a sub-statement repeats the statement".into());
    }
    Ok((a.clone(), b.clone()))
}

fn retry_note(reason: &str) -> String {
    format!("\nYour previous answer could not be used ({reason}). Follow the answer format exactly.\n")
}

/// Scores statements on one task's grounded moment through a provider session.
pub struct SessionReasoner<'s, 'p> {
    pub session: &'s mut Session<'p>,
    pub moment: GroundedMoment,
    pub frames: &'s [Frame],
    pub prover: ProverKind,
    pub format_retries: u32,
}

impl SessionReasoner<'_, '_> {
    fn with_retries<T>(
        &mut self,
        template: &str,
        base: BTreeMap<String, String>,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, TreeError> {
        let attempts = self.format_retries + 1;
        let mut note = String::new();
        let mut reason = String::new();
        for _ in 0..attempts {
            let mut call_args = base.clone();
            call_args.insert("retry_note".into(), note.clone());
            match self.session.complete(template, call_args, vec![]) {
                Ok(text) => match parse(&text) {
                    Ok(v) => return Ok(v),
                    Err(r) => {
                        self.session.transcript_mut().flag_last("malformed-completion");
                        reason = r;
                    }
                },
                Err(ProviderError::MalformedResponse(r)) => reason = r,
                Err(e) => return Err(e.into()),
            }
            note = retry_note(&reason);
        }
        Err(TreeError::MalformedCompletion { attempts, reason })
    }
}

impl Reasoner for SessionReasoner<'_, '_> {
    fn root_statement(&mut self, question: &str, option: &str) -> Result<String, TreeError> {
        self.with_retries(
            "declarative",
            args([("question", question), ("option", option)]),
            |text| {
                let line = text
                    .lines()
                    .map(str::trim)
                    .find(|l| !l.is_empty())
                    .unwrap_or("")
                    .trim_matches('"');
                if line.is_empty() {
                    Err("empty statement".into())
                } else {
                    Ok(line.to_string())
                }
            },
        )
    }

    fn decompose(&mut self, statement: &str) -> Result<(String, String), TreeError> {
        self.with_retries("decompose", args([("statement", statement)]), |text| {
            parse_two_statements(text, statement)
        })
    }

    fn direct_score(&mut self, statement: &str) -> Result<f64, TreeError> {
        prove_statement(self.session, statement, &self.moment, self.frames, self.prover)
    }
}

pub fn prove_statement(
    session: &mut Session<'_>,
    statement: &str,
    moment: &GroundedMoment,
    frames: &[Frame],
    kind: ProverKind,
) -> Result<f64, TreeError> {
    Ok(prove(session, statement, moment, frames, kind)?.value)
}

fn degrade(forest: &mut EntailmentForest, id: NodeId, children: Vec<PrunedChild>, failure: String) {
    log::warn!("expansion of {id} failed: {failure}");
    let node = forest.node_mut(id);
    node.status = NodeStatus::LeafPruned;
    node.scores = ScoreCard::leaf(node.scores.direct);
    node.pruned_record = Some(PrunedRecord {
        children,
        proof: None,
        failure: Some(failure),
    });
}

/// Expands `id`, which must already carry its direct score.
///
/// Dynamic mode decides from the children's direct scores alone: when their
/// product falls below the node's direct score the children are discarded
/// and not expanded further. Kept children are expanded recursively and the
/// node's proof is the product of their final scores. Provider failures turn
/// the node into a pruned leaf instead of failing the task.
///
/// `decompositions` counts decomposition requests.
pub fn expand_node(
    forest: &mut EntailmentForest,
    id: NodeId,
    reasoner: &mut dyn Reasoner,
    config: &TreeConfig,
    decompositions: &mut usize,
) {
    let node = forest.node(id);
    let (depth, direct, text) = (node.statement.depth, node.scores.direct, node.statement.text.clone());
    if depth >= config.max_depth {
        let node = forest.node_mut(id);
        node.status = NodeStatus::LeafMaxDepth;
        node.scores = ScoreCard::leaf(direct);
        return;
    }

    *decompositions += 1;
    let (a, b) = match reasoner.decompose(&text) {
        Ok(pair) => pair,
        Err(e) => return degrade(forest, id, Vec::new(), e.to_string()),
    };
    let mut scored = Vec::with_capacity(2);
    for sub in [a, b] {
        match reasoner.direct_score(&sub) {
            Ok(s) => scored.push(PrunedChild { text: sub, direct: s }),
            Err(e) => return degrade(forest, id, scored, e.to_string()),
        }
    }

    let provisional = proof_score((scored[0].direct, scored[1].direct));
    if config.expansion == Expansion::Dynamic && provisional < direct {
        let node = forest.node_mut(id);
        node.status = NodeStatus::LeafPruned;
        node.scores = ScoreCard::leaf(direct);
        node.pruned_record = Some(PrunedRecord {
            children: scored,
            proof: Some(provisional),
            failure: None,
        });
        return;
    }

    let children: Vec<NodeId> = scored
        .into_iter()
        .enumerate()
        .map(|(slot, c)| {
            forest.add_node(
                Statement {
                    text: c.text,
                    depth: depth + 1,
                    origin: StatementOrigin::Decomposed {
                        parent: id,
                        slot: slot as u8,
                    },
                },
                c.direct,
            )
        })
        .collect();
    {
        let node = forest.node_mut(id);
        node.status = NodeStatus::Internal;
        node.children = children.clone();
    }
    for &c in &children {
        expand_node(forest, c, reasoner, config, decompositions);
    }
    let finals = (
        forest.node(children[0]).scores.final_score,
        forest.node(children[1]).scores.final_score,
    );
    forest.node_mut(id).scores = ScoreCard::with_proof(direct, proof_score(finals));
}

/// Builds and expands one root per option, backtraces and selects.
pub fn build_forest(
    task: &QaTask,
    reasoner: &mut dyn Reasoner,
    config: &TreeConfig,
) -> Result<EntailmentForest, TreeError> {
    let mut forest = EntailmentForest::new(task.id.clone());
    for option in &task.options {
        let text = reasoner.root_statement(&task.question, &option.text)?;
        let direct = reasoner.direct_score(&text)?;
        forest.add_root(option.index, text, direct);
    }
    for root in forest.roots.clone() {
        let mut calls = 0;
        if forest.roots.len() > 1 {
            expand_node(&mut forest, root, reasoner, config, &mut calls);
        }
        forest.decomposition_calls.push(calls);
    }
    backtrace(&mut forest)?;
    forest.selected_index = Some(select_answer(&forest)?);
    forest.ground_truth_index = task.ground_truth_index;
    forest.question_type = Some(task.question_type);
    Ok(forest)
}

/// What a task needs besides providers and config.
#[derive(Clone, Copy)]
pub struct TaskContext<'a> {
    pub video: &'a dyn VideoSource,
    pub captions: Option<&'a CaptionStore>,
    /// `task id -> [start_s, end_s]`, for ground-truth grounding.
    pub intervals: Option<&'a BTreeMap<String, (f64, f64)>>,
}

/// Grounds the task once, then builds, expands and backtraces its forest.
/// The transcript is returned whether or not the task succeeded.
pub fn evaluate_task(
    task: &QaTask,
    providers: &ProviderSet,
    config: &TreeConfig,
    ctx: TaskContext<'_>,
) -> (Result<EntailmentForest, TreeError>, Transcript) {
    let mut session = providers.session();
    let result = evaluate_in(task, &mut session, config, ctx);
    let transcript = session.into_transcript();
    let result = result.map(|mut forest| {
        forest.call_counts = transcript
            .role_counts()
            .into_iter()
            .map(|(role, n)| (role.as_str().to_string(), n))
            .collect();
        forest
    });
    (result, transcript)
}

fn evaluate_in(
    task: &QaTask,
    session: &mut Session<'_>,
    config: &TreeConfig,
    ctx: TaskContext<'_>,
) -> Result<EntailmentForest, TreeError> {
    let violations = validate_task(task);
    if !violations.is_empty() {
        return Err(TreeError::InvalidTask(violations));
    }
    let frames = ctx.video.frames(&task.video_ref)?;
    let moment = match config.grounding_mode {
        GroundingMode::Grounded => {
            ground(
                session,
                &task.video_ref,
                &task.question,
                task.question_type,
                &frames,
                config.look_around_window,
                ctx.captions,
            )?
            .moment
        }
        GroundingMode::FullVideo => GroundedMoment::full_video(frames.len())?,
        GroundingMode::GroundTruthIntervals => {
            let &(s, e) = ctx
                .intervals
                .and_then(|m| m.get(&task.id))
                .ok_or_else(|| TreeError::MissingInterval(task.id.clone()))?;
            moment_from_seconds(&frames, s, e)?
        }
    };
    let mut reasoner = SessionReasoner {
        session,
        moment,
        frames: &frames,
        prover: config.prover,
        format_retries: config.format_retries,
    };
    let mut forest = build_forest(task, &mut reasoner, config)?;
    forest.moment = Some(moment);
    Ok(forest)
}
