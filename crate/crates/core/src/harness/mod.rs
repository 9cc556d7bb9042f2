//! Evaluation runs: config, parallel task evaluation, traces, reports and
//! run comparison.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BackendKind, ProverStyle, ProviderSpec, RunConfig, RunSection, VideoSourceKind};

use crate::grounding::GroundingMode;
use crate::providers::{ProviderSet, Transcript};
use crate::qa::{Dataset, DatasetError, DatasetVariant, QuestionType};
use crate::tree::{evaluate_task, EntailmentForest, Expansion, TaskContext};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("trace {path} is unreadable: {reason}")]
    BadTrace { path: PathBuf, reason: String },
    #[error("runs cover different tasks ({only_a} only in the first, {only_b} only in the second)")]
    MismatchedDatasets { only_a: usize, only_b: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// What gets written per task: enough to recompute every accuracy figure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub task_id: String,
    pub question_type: QuestionType,
    pub ground_truth_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forest: Option<EntailmentForest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub question_type: QuestionType,
    pub ground_truth_index: Option<usize>,
    pub selected_index: Option<usize>,
    pub correct: Option<bool>,
    pub calls: BTreeMap<String, usize>,
    pub decomposition_calls: usize,
    pub roots: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub answered: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl Accuracy {
    fn add(&mut self, correct: bool) {
        self.answered += 1;
        self.correct += usize::from(correct);
        self.accuracy = self.correct as f64 / self.answered as f64;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportPrune {
    pub task_id: String,
    pub node: String,
    pub direct: f64,
    pub proof: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedTask {
    pub task_id: String,
    pub error: String,
}

/// Run summary. Contains nothing timing- or cache-dependent, so a rerun
/// against a warm cache reproduces it byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub variant: DatasetVariant,
    pub config_digest: String,
    pub grounding_mode: GroundingMode,
    pub expansion: Expansion,
    pub tasks: usize,
    /// Correct over answered, where answered means the task finished and
    /// has a ground truth.
    pub overall: Accuracy,
    pub per_type: BTreeMap<QuestionType, Accuracy>,
    pub calls_per_role: BTreeMap<String, usize>,
    pub avg_calls_per_task: BTreeMap<String, f64>,
    pub avg_decompositions_per_root: f64,
    pub prune_events: Vec<ReportPrune>,
    pub failed: Vec<FailedTask>,
    pub rows: Vec<TaskRow>,
    /// Not serialized, so reports from replayed runs compare equal on disk.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl EvalReport {
    pub fn failure_rate(&self) -> f64 {
        if self.tasks == 0 {
            0.0
        } else {
            self.failed.len() as f64 / self.tasks as f64
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Process-level numbers that differ between otherwise identical runs.
#[derive(Clone, Debug, Default)]
pub struct RunStats {
    pub wall_time: Duration,
    pub backend_calls: u64,
    pub cache_hits: usize,
    pub transcript_entries: usize,
}

pub struct EvalOutcome {
    pub report: EvalReport,
    pub stats: RunStats,
    pub traces: Vec<TraceRecord>,
    pub transcripts: Vec<Transcript>,
}

fn trace_file_name(task_id: &str) -> String {
    let safe: String = task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

/// Evaluates every task, `concurrency` at a time. Rows keep dataset order.
pub fn run_eval(
    dataset: &Dataset,
    config: &RunConfig,
    providers: &ProviderSet,
    ctx: TaskContext<'_>,
    trace_dir: Option<&Path>,
) -> Result<EvalOutcome, HarnessError> {
    let start = Instant::now();
    let calls_before = providers.backend_calls();
    let tree_config = config.tree_config();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.run.concurrency)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let results: Vec<(TraceRecord, Transcript)> = pool.install(|| {
        dataset
            .tasks
            .par_iter()
            .map(|task| {
                let (forest, transcript) = evaluate_task(task, providers, &tree_config, ctx);
                let (forest, error) = match forest {
                    Ok(f) => (Some(f), None),
                    Err(e) => {
                        log::warn!("task {} failed: {e}", task.id);
                        (None, Some(e.to_string()))
                    }
                };
                let record = TraceRecord {
                    task_id: task.id.clone(),
                    question_type: task.question_type,
                    ground_truth_index: task.ground_truth_index,
                    error,
                    forest,
                };
                (record, transcript)
            })
            .collect()
    });
    let (traces, transcripts): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    if let Some(dir) = trace_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (t, tr) in traces.iter().zip(&transcripts) {
            let path = dir.join(trace_file_name(&t.task_id));
            let json = serde_json::to_string_pretty(t).expect("trace serializes");
            std::fs::write(&path, json).map_err(io_err(&path))?;
            let path = dir.join("transcripts").join(trace_file_name(&t.task_id));
            std::fs::create_dir_all(path.parent().unwrap()).map_err(io_err(dir))?;
            let json = serde_json::to_string_pretty(tr).expect("transcript serializes");
            std::fs::write(&path, json).map_err(io_err(&path))?;
        }
    }

    let mut report = summarize(&dataset.name, dataset.variant, config, &traces);
    for (row, tr) in report.rows.iter_mut().zip(&transcripts) {
        if row.error.is_some() {
            row.calls = tr.role_counts().into_iter().map(|(r, n)| (r.to_string(), n)).collect();
        }
    }
    fill_call_totals(&mut report);
    report.wall_time = start.elapsed();
    let stats = RunStats {
        wall_time: report.wall_time,
        backend_calls: providers.backend_calls() - calls_before,
        cache_hits: transcripts.iter().map(Transcript::cache_hits).sum(),
        transcript_entries: transcripts.iter().map(Transcript::len).sum(),
    };
    Ok(EvalOutcome {
        report,
        stats,
        traces,
        transcripts,
    })
}

fn fill_call_totals(report: &mut EvalReport) {
    let mut totals: BTreeMap<String, usize> = BTreeMap::new();
    for row in &report.rows {
        for (role, n) in &row.calls {
            *totals.entry(role.clone()).or_default() += n;
        }
    }
    let n = report.tasks.max(1) as f64;
    report.avg_calls_per_task = totals.iter().map(|(r, c)| (r.clone(), *c as f64 / n)).collect();
    report.calls_per_role = totals;
}

/// Builds a report from trace records alone.
pub fn summarize(dataset: &str, variant: DatasetVariant, config: &RunConfig, traces: &[TraceRecord]) -> EvalReport {
    let mut overall = Accuracy::default();
    let mut per_type: BTreeMap<QuestionType, Accuracy> = BTreeMap::new();
    let mut prune_events = Vec::new();
    let mut failed = Vec::new();
    let mut rows = Vec::new();
    let (mut decomps, mut roots) = (0usize, 0usize);
    for t in traces {
        let mut row = TaskRow {
            task_id: t.task_id.clone(),
            question_type: t.question_type,
            ground_truth_index: t.ground_truth_index,
            selected_index: None,
            correct: None,
            calls: BTreeMap::new(),
            decomposition_calls: 0,
            roots: 0,
            error: t.error.clone(),
        };
        if let Some(e) = &t.error {
            failed.push(FailedTask {
                task_id: t.task_id.clone(),
                error: e.clone(),
            });
        }
        if let Some(f) = &t.forest {
            row.selected_index = f.selected_index;
            row.correct = f.correct();
            row.calls = f.call_counts.clone();
            row.decomposition_calls = f.decomposition_calls.iter().sum();
            row.roots = f.decomposition_calls.len();
            decomps += row.decomposition_calls;
            roots += row.roots;
            if let Some(c) = row.correct {
                overall.add(c);
                per_type.entry(t.question_type).or_default().add(c);
            }
            prune_events.extend(f.prune_events().into_iter().map(|p| ReportPrune {
                task_id: t.task_id.clone(),
                node: p.node.to_string(),
                direct: p.direct,
                proof: p.proof,
            }));
        }
        rows.push(row);
    }
    let mut report = EvalReport {
        dataset: dataset.to_string(),
        variant,
        config_digest: config.digest(),
        grounding_mode: config.run.grounding_mode,
        expansion: config.run.expansion,
        tasks: traces.len(),
        overall,
        per_type,
        calls_per_role: BTreeMap::new(),
        avg_calls_per_task: BTreeMap::new(),
        avg_decompositions_per_root: if roots == 0 { 0.0 } else { decomps as f64 / roots as f64 },
        prune_events,
        failed,
        rows,
        wall_time: Duration::ZERO,
    };
    fill_call_totals(&mut report);
    report
}

/// Reads every `*.json` trace in `dir`, sorted by file name.
pub fn load_traces(dir: &Path) -> Result<Vec<TraceRecord>, HarnessError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|e| HarnessError::BadTrace {
                path: p.clone(),
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn load_trace(path: &Path) -> Result<TraceRecord, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::BadTrace {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Exit status for a finished run: 2 when every task failed, 3 when the
/// failure share exceeds the threshold.
pub fn exit_code(report: &EvalReport, failure_threshold: f64) -> i32 {
    if report.tasks > 0 && report.failed.len() == report.tasks {
        2
    } else if report.failure_rate() > failure_threshold {
        3
    } else {
        0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub a: String,
    pub b: String,
    pub tasks: usize,
    /// `b - a`, in accuracy points (0..1).
    pub overall_delta: f64,
    pub per_type_delta: BTreeMap<QuestionType, f64>,
    pub calls_delta: BTreeMap<String, f64>,
    pub decompositions_delta: f64,
    /// Tasks answered correctly in exactly one of the runs.
    pub flipped: Vec<String>,
}

pub fn compare_runs(a: &EvalReport, b: &EvalReport) -> Result<RunComparison, HarnessError> {
    let ids = |r: &EvalReport| r.rows.iter().map(|x| x.task_id.clone()).collect::<std::collections::BTreeSet<_>>();
    let (ia, ib) = (ids(a), ids(b));
    if ia != ib {
        return Err(HarnessError::MismatchedDatasets {
            only_a: ia.difference(&ib).count(),
            only_b: ib.difference(&ia).count(),
        });
    }
    let mut per_type_delta = BTreeMap::new();
    for t in a.per_type.keys().chain(b.per_type.keys()) {
        let acc = |r: &EvalReport| r.per_type.get(t).map_or(0.0, |x| x.accuracy);
        per_type_delta.insert(*t, acc(b) - acc(a));
    }
    let mut calls_delta = BTreeMap::new();
    for role in a.avg_calls_per_task.keys().chain(b.avg_calls_per_task.keys()) {
        let avg = |r: &EvalReport| r.avg_calls_per_task.get(role).copied().unwrap_or(0.0);
        calls_delta.insert(role.clone(), avg(b) - avg(a));
    }
    let correct_b: BTreeMap<&str, Option<bool>> = b.rows.iter().map(|r| (r.task_id.as_str(), r.correct)).collect();
    let flipped = a
        .rows
        .iter()
        .filter(|r| r.correct.unwrap_or(false) != correct_b[r.task_id.as_str()].unwrap_or(false))
        .map(|r| r.task_id.clone())
        .collect();
    Ok(RunComparison {
        a: format!("{} [{}] ({}, {:?})", a.dataset, a.variant, a.config_digest, a.grounding_mode),
        b: format!("{} [{}] ({}, {:?})", b.dataset, b.variant, b.config_digest, b.grounding_mode),
        tasks: ia.len(),
        overall_delta: b.overall.accuracy - a.overall.accuracy,
        per_type_delta,
        calls_delta,
        decompositions_delta: b.avg_decompositions_per_root - a.avg_decompositions_per_root,
        flipped,
    })
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Markdown summary. Question types appear in a fixed order, then overall.
pub fn render_report(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {} ({})", report.dataset, report.variant);
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "config {} | grounding {:?} | expansion {:?} | {} tasks | {} failed",
        report.config_digest,
        report.grounding_mode,
        report.expansion,
        report.tasks,
        report.failed.len()
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "| type | answered | correct | accuracy (%) |");
    let _ = writeln!(s, "|---|---:|---:|---:|");
    for t in QuestionType::ALL {
        if let Some(a) = report.per_type.get(&t) {
            let _ = writeln!(s, "| {} | {} | {} | {} |", t, a.answered, a.correct, pct(a.accuracy));
        }
    }
    let o = report.overall;
    let _ = writeln!(s, "| overall | {} | {} | {} |", o.answered, o.correct, pct(o.accuracy));
    let _ = writeln!(s);
    let _ = writeln!(s, "| role | calls | per task |");
    let _ = writeln!(s, "|---|---:|---:|");
    for (role, n) in &report.calls_per_role {
        let _ = writeln!(s, "| {role} | {n} | {:.2} |", report.avg_calls_per_task[role]);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "decompositions per root: {:.2}", report.avg_decompositions_per_root);
    let _ = writeln!(s, "prune events: {}", report.prune_events.len());
    for p in &report.prune_events {
        let _ = writeln!(s, "- {} {}: ({}, {})", p.task_id, p.node, fmt_score(p.direct), fmt_score(p.proof));
    }
    if !report.failed.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "failed tasks:");
        for f in &report.failed {
            let _ = writeln!(s, "- {}: {}", f.task_id, f.error);
        }
    }
    s
}

pub fn render_comparison(c: &RunComparison) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "a: {}", c.a);
    let _ = writeln!(s, "b: {}", c.b);
    let _ = writeln!(s);
    let _ = writeln!(s, "| metric | b - a |");
    let _ = writeln!(s, "|---|---:|");
    let _ = writeln!(s, "| accuracy (pp) | {:+.1} |", 100.0 * c.overall_delta);
    for t in QuestionType::ALL {
        if let Some(d) = c.per_type_delta.get(&t) {
            let _ = writeln!(s, "| {t} accuracy (pp) | {:+.1} |", 100.0 * d);
        }
    }
    for (role, d) in &c.calls_delta {
        let _ = writeln!(s, "| {role} calls per task | {d:+.2} |");
    }
    let _ = writeln!(s, "| decompositions per root | {:+.2} |", c.decompositions_delta);
    let _ = writeln!(s);
    let _ = writeln!(s, "{} of {} tasks changed correctness", c.flipped.len(), c.tasks);
    s
}

fn fmt_score(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0');
    s.strip_suffix('.').map_or_else(|| s.to_string(), |t| format!("{t}.0"))
}

/// Indented text view of one trace.
pub fn render_trace(trace: &TraceRecord) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "task {} ({})", trace.task_id, trace.question_type);
    if let Some(e) = &trace.error {
        let _ = writeln!(s, "failed: {e}");
    }
    let Some(f) = &trace.forest else {
        return s;
    };
    if let Some(m) = &f.moment {
        let _ = writeln!(s, "moment: frames {}..={}", m.start_index, m.end_index);
    }
    for (i, root) in f.roots.iter().enumerate() {
        let mark = match (Some(i) == f.selected_index, Some(i) == f.ground_truth_index) {
            (true, true) => " [selected, correct]",
            (true, false) => " [selected]",
            (false, true) => " [correct]",
            _ => "",
        };
        let _ = writeln!(s, "option {i}{mark}");
        let mut stack = vec![(*root, 1usize)];
        while let Some((id, indent)) = stack.pop() {
            let n = f.node(id);
            let _ = writeln!(
                s,
                "{}{} \"{}\" direct {} proof {} final {} {}",
                "  ".repeat(indent),
                id,
                n.statement.text,
                fmt_score(n.scores.direct),
                n.scores.proof.map_or_else(|| "-".to_string(), fmt_score),
                fmt_score(n.scores.final_score),
                serde_json::to_value(n.status).expect("status serializes").as_str().unwrap_or_default()
            );
            for c in n.children.iter().rev() {
                stack.push((*c, indent + 1));
            }
        }
    }
    let events = f.prune_events();
    if !events.is_empty() {
        let _ = writeln!(s, "pruned:");
        for p in events {
            let _ = writeln!(s, "  {} ({}, {})", p.node, fmt_score(p.direct), fmt_score(p.proof));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_suite, SynthSource};

    fn run(noise: f64, n: usize, trace_dir: Option<&Path>) -> (EvalOutcome, RunConfig) {
        let cfg = RunConfig::synthetic(noise);
        let suite = generate_suite(3, n, false, &cfg.world_params()).unwrap();
        let set = cfg.build_providers(false).unwrap();
        let source = SynthSource {
            params: cfg.world_params(),
        };
        let ctx = TaskContext {
            video: &source,
            captions: None,
            intervals: None,
        };
        (run_eval(&suite.dataset, &cfg, &set, ctx, trace_dir).unwrap(), cfg)
    }

    #[test]
    fn report_is_recomputable_from_traces() {
        let dir = tempfile::tempdir().unwrap();
        let (out, cfg) = run(0.1, 8, Some(dir.path()));
        assert_eq!(out.report.tasks, 8);
        let traces = load_traces(dir.path()).unwrap();
        let again = summarize(&out.report.dataset, out.report.variant, &cfg, &traces);
        assert_eq!(again.overall, out.report.overall);
        assert_eq!(again.per_type, out.report.per_type);
        assert_eq!(again.prune_events.len(), out.report.prune_events.len());
    }

    #[test]
    fn rows_keep_dataset_order() {
        let (out, _) = run(0.0, 6, None);
        let ids: Vec<_> = out.report.rows.iter().map(|r| r.task_id.clone()).collect();
        let cfg = RunConfig::synthetic(0.0);
        let suite = generate_suite(3, 6, false, &cfg.world_params()).unwrap();
        let expected: Vec<_> = suite.dataset.tasks.iter().map(|t| t.id.clone()).collect();
        assert_eq!(ids, expected);
        assert_eq!(exit_code(&out.report, 0.1), 0);
    }

    #[test]
    fn render_is_stable() {
        let (out, _) = run(0.0, 4, None);
        let a = render_report(&out.report);
        assert_eq!(a, render_report(&out.report));
        assert!(a.contains("| overall |"));
        let trace = render_trace(&out.traces[0]);
        assert!(trace.contains("option 0"));
    }

    #[test]
    fn compare_requires_same_tasks() {
        let (a, _) = run(0.0, 4, None);
        let (b, _) = run(0.2, 4, None);
        let c = compare_runs(&a.report, &b.report).unwrap();
        assert_eq!(c.tasks, 4);
        assert!(c.a.contains("[Original]"));
        assert!(render_comparison(&c).contains("accuracy (pp)"));
        let mut short = b.report.clone();
        short.rows.pop();
        assert!(matches!(
            compare_runs(&a.report, &short),
            Err(HarnessError::MismatchedDatasets { only_a: 1, only_b: 0 })
        ));
    }

    #[test]
    fn failures_raise_exit_code() {
        let (mut out, _) = run(0.0, 4, None);
        out.report.failed.push(FailedTask {
            task_id: "x".into(),
            error: "boom".into(),
        });
        assert_eq!(exit_code(&out.report, 0.1), 3);
        assert_eq!(exit_code(&out.report, 0.5), 0);
        out.report.tasks = 1;
        assert_eq!(exit_code(&out.report, 0.5), 2);
    }

    #[test]
    fn score_format() {
        assert_eq!(fmt_score(0.8), "0.8");
        assert_eq!(fmt_score(0.63), "0.63");
        assert_eq!(fmt_score(1.0), "1.0");
        assert_eq!(fmt_score(0.123456), "0.1235");
    }
}
