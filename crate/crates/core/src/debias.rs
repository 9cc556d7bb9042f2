//! Distractor rewriting with strict validation, and a blind probe that
//! measures how often a task can be answered from its text alone.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{args, ProviderError, ProviderRole, ProviderSet, Session, Transcript};
use crate::qa::{Dataset, DatasetVariant, QaTask};

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Error)]
pub enum DebiasError {
    #[error("task {0} has no ground truth to protect")]
    NoGroundTruth(String),
    #[error("no acceptable rewrite for task {task_id} after {attempts} attempts")]
    FailedRewrite {
        task_id: String,
        attempts: u32,
        violations_history: Vec<Vec<RewriteViolation>>,
    },
    #[error("nothing was probed")]
    EmptyProbe,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewriteViolation {
    QuestionChanged,
    GroundTruthAltered,
    DistractorsUnchanged { indices: Vec<usize> },
    DuplicateOrEmpty,
    CountChanged { expected: usize, got: usize },
}

/// Lowercased, punctuation stripped, whitespace collapsed.
pub fn normalize(text: &str) -> String {
    text.chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn validate_rewrite(original: &QaTask, candidate: &QaTask) -> Vec<RewriteViolation> {
    let mut out = Vec::new();
    if candidate.question != original.question {
        out.push(RewriteViolation::QuestionChanged);
    }
    let gt = original.ground_truth_index;
    let gt_text = |t: &QaTask| gt.and_then(|i| t.options.get(i)).map(|o| o.text.clone());
    if candidate.ground_truth_index != gt || gt_text(candidate) != gt_text(original) {
        out.push(RewriteViolation::GroundTruthAltered);
    }
    let unchanged: Vec<usize> = original
        .options
        .iter()
        .zip(&candidate.options)
        .enumerate()
        .filter(|(i, (a, b))| Some(*i) != gt && normalize(&a.text) == normalize(&b.text))
        .map(|(i, _)| i)
        .collect();
    if !unchanged.is_empty() {
        out.push(RewriteViolation::DistractorsUnchanged { indices: unchanged });
    }
    let normalized: Vec<String> = candidate.options.iter().map(|o| normalize(&o.text)).collect();
    let has_dup = normalized
        .iter()
        .enumerate()
        .any(|(i, a)| a.is_empty() || normalized[..i].contains(a));
    if has_dup {
        out.push(RewriteViolation::DuplicateOrEmpty);
    }
    if candidate.options.len() != original.options.len() {
        out.push(RewriteViolation::CountChanged {
            expected: original.options.len(),
            got: candidate.options.len(),
        });
    }
    out
}

pub fn letter(index: usize) -> char {
    (b'A' + (index % 26) as u8) as char
}

pub fn render_options(task: &QaTask) -> String {
    task.options
        .iter()
        .map(|o| format!("{}. {}", letter(o.index), o.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Reads `A. text` lines in order.
fn parse_rewrite(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| {
            let l = l.trim();
            let mut chars = l.chars();
            let c = chars.next()?;
            let rest = chars.as_str();
            let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
            c.is_ascii_alphabetic().then(|| rest.trim().to_string())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewriteResult {
    pub original: QaTask,
    pub rewritten: QaTask,
    pub attempts: u32,
    pub violations_history: Vec<Vec<RewriteViolation>>,
}

/// Asks the rewriter for new distractors until a candidate passes
/// [`validate_rewrite`].
pub fn rewrite_answers(
    session: &mut Session<'_>,
    task: &QaTask,
    dataset_name: &str,
    max_attempts: u32,
) -> Result<RewriteResult, DebiasError> {
    let gt = task
        .ground_truth_index
        .ok_or_else(|| DebiasError::NoGroundTruth(task.id.clone()))?;
    let gt_text = task.options[gt].text.clone();
    let mut history: Vec<Vec<RewriteViolation>> = Vec::new();
    for attempt in 1..=max_attempts.max(1) {
        let note = match history.last() {
            Some(v) => format!("\nYour previous answer was rejected: {v:?}.\n"),
            None => String::new(),
        };
        let reply = session.complete(
            "rewrite",
            args([
                ("dataset", dataset_name.to_string()),
                ("question", task.question.clone()),
                ("options", render_options(task)),
                ("answer_letter", letter(gt).to_string()),
                ("answer_text", gt_text.clone()),
                ("count", task.options.len().to_string()),
                ("retry_note", note),
            ]),
            vec![],
        );
        let texts = match reply {
            Ok(text) => parse_rewrite(&text),
            Err(ProviderError::MalformedResponse(_)) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut candidate = QaTask::new(
            task.id.clone(),
            task.video_ref.clone(),
            task.question.clone(),
            texts,
            task.ground_truth_index,
            task.question_type,
        );
        candidate.extra = task.extra.clone();
        let violations = validate_rewrite(task, &candidate);
        if violations.is_empty() {
            let provenance = serde_json::json!({
                "rewriter": session.providers().model_id(ProviderRole::Rewriter).unwrap_or("unknown"),
                "prompt_version": session.providers().templates().version(),
                "attempts": attempt,
            });
            candidate.extra.insert("provenance".into(), provenance);
            return Ok(RewriteResult {
                original: task.clone(),
                rewritten: candidate,
                attempts: attempt,
                violations_history: history,
            });
        }
        session.transcript_mut().flag_last("rewrite-rejected");
        history.push(violations);
    }
    Err(DebiasError::FailedRewrite {
        task_id: task.id.clone(),
        attempts: max_attempts.max(1),
        violations_history: history,
    })
}

#[derive(Clone, Debug)]
pub struct DebiasOutcome {
    /// Every task, rewritten where possible, in input order.
    pub dataset: Dataset,
    pub accepted: Vec<RewriteResult>,
    /// Task id and reason for tasks kept as they were.
    pub failed: Vec<(String, String)>,
    pub transcripts: Vec<Transcript>,
}

/// Rewrites every task. Tasks that cannot be rewritten are kept unchanged
/// and marked with `"rewrite_failed": true`.
pub fn rewrite_dataset(providers: &ProviderSet, dataset: &Dataset, max_attempts: u32) -> DebiasOutcome {
    let results: Vec<(Result<RewriteResult, DebiasError>, Transcript)> = dataset
        .tasks
        .par_iter()
        .map(|t| {
            let mut session = providers.session();
            let r = rewrite_answers(&mut session, t, &dataset.name, max_attempts);
            (r, session.into_transcript())
        })
        .collect();
    let mut out = DebiasOutcome {
        dataset: Dataset {
            name: dataset.name.clone(),
            tasks: Vec::with_capacity(dataset.tasks.len()),
            variant: DatasetVariant::Rewritten,
        },
        accepted: Vec::new(),
        failed: Vec::new(),
        transcripts: Vec::new(),
    };
    for (task, (result, transcript)) in dataset.tasks.iter().zip(results) {
        out.transcripts.push(transcript);
        match result {
            Ok(r) => {
                out.dataset.tasks.push(r.rewritten.clone());
                out.accepted.push(r);
            }
            Err(e) => {
                log::warn!("keeping {} unchanged: {e}", task.id);
                let mut kept = task.clone();
                kept.extra.insert("rewrite_failed".into(), serde_json::Value::Bool(true));
                out.dataset.tasks.push(kept);
                out.failed.push((task.id.clone(), e.to_string()));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeOutcome {
    Index(usize),
    Abstain,
}

/// Reads an option letter: `B`, `(B)`, `B.`, `Answer: B`.
pub fn parse_choice(text: &str, arity: usize) -> Option<usize> {
    let t = text.trim();
    let t = t
        .split_once(':')
        .filter(|(head, _)| head.trim().eq_ignore_ascii_case("answer"))
        .map_or(t, |(_, rest)| rest.trim());
    let t = t.trim_start_matches('(');
    let mut chars = t.chars();
    let c = chars.next()?.to_ascii_uppercase();
    let standalone = chars.next().is_none_or(|n| !n.is_alphanumeric());
    let idx = (c as usize).checked_sub('A' as usize)?;
    (c.is_ascii_uppercase() && standalone && idx < arity).then_some(idx)
}

/// Answers from question and options only. No frames are attached.
pub fn blind_probe(session: &mut Session<'_>, task: &QaTask) -> Result<ProbeOutcome, DebiasError> {
    let reply = session.complete(
        "blind_answer",
        args([("question", task.question.clone()), ("options", render_options(task))]),
        vec![],
    );
    let text = match reply {
        Ok(t) => t,
        Err(ProviderError::MalformedResponse(_)) => String::new(),
        Err(e) => return Err(e.into()),
    };
    Ok(match parse_choice(&text, task.arity()) {
        Some(i) => ProbeOutcome::Index(i),
        None => {
            session.transcript_mut().flag_last("probe-abstain");
            ProbeOutcome::Abstain
        }
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub n: usize,
    pub correct: usize,
    pub abstained: usize,
    pub accuracy: f64,
}

impl ProbeStats {
    fn add(&mut self, correct: bool, abstained: bool) {
        self.n += 1;
        self.correct += correct as usize;
        self.abstained += abstained as usize;
        self.accuracy = self.correct as f64 / self.n as f64;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub dataset: String,
    pub variant: DatasetVariant,
    pub n: usize,
    pub abstained: usize,
    /// Correct blind answers over all probed tasks with ground truth;
    /// abstentions count as wrong.
    pub blind_accuracy: f64,
    pub per_type: BTreeMap<String, ProbeStats>,
}

pub fn bias_report(dataset: &Dataset, outcomes: &[ProbeOutcome]) -> Result<BiasReport, DebiasError> {
    let mut overall = ProbeStats::default();
    let mut per_type: BTreeMap<String, ProbeStats> = BTreeMap::new();
    for (task, outcome) in dataset.tasks.iter().zip(outcomes) {
        let Some(gt) = task.ground_truth_index else { continue };
        let correct = *outcome == ProbeOutcome::Index(gt);
        let abstained = *outcome == ProbeOutcome::Abstain;
        overall.add(correct, abstained);
        per_type
            .entry(task.question_type.as_str().to_string())
            .or_default()
            .add(correct, abstained);
    }
    if overall.n == 0 {
        return Err(DebiasError::EmptyProbe);
    }
    Ok(BiasReport {
        dataset: dataset.name.clone(),
        variant: dataset.variant,
        n: overall.n,
        abstained: overall.abstained,
        blind_accuracy: overall.accuracy,
        per_type,
    })
}

/// Probes every task in order; returns outcomes and the report.
pub fn probe_dataset(
    providers: &ProviderSet,
    dataset: &Dataset,
) -> Result<(Vec<ProbeOutcome>, BiasReport, Vec<Transcript>), DebiasError> {
    let probed: Vec<Result<(ProbeOutcome, Transcript), DebiasError>> = dataset
        .tasks
        .par_iter()
        .map(|t| {
            let mut session = providers.session();
            let o = blind_probe(&mut session, t)?;
            Ok((o, session.into_transcript()))
        })
        .collect();
    let (outcomes, transcripts): (Vec<_>, Vec<_>) = probed.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().unzip();
    let report = bias_report(dataset, &outcomes)?;
    Ok((outcomes, report, transcripts))
}
