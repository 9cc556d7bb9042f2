use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use groundtree::debias::{probe_dataset, rewrite_dataset, DEFAULT_MAX_ATTEMPTS};
use groundtree::grounding::GroundingMode;
use groundtree::harness::{
    compare_runs, exit_code, load_trace, render_comparison, render_report, render_trace, run_eval, EvalReport,
    ProverStyle, RunConfig, VideoSourceKind,
};
use groundtree::qa::{load_dataset, save_dataset, FormatHint};
use groundtree::synth::{bias_suite, generate_suite};
use groundtree::tree::{Expansion, TaskContext};

#[derive(Parser)]
#[command(name = "groundtree", version, about = "Grounded entailment-tree video QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a dataset and write a report plus per-task traces.
    Eval(EvalArgs),
    /// Rewrite distractors and write the rewritten dataset.
    Debias(DebiasArgs),
    /// Answer every task from text alone and report blind accuracy.
    ProbeBias(ProbeArgs),
    /// Synthetic worlds and task suites.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Inspect trace files.
    Trace {
        #[command(subcommand)]
        command: TraceCommand,
    },
    /// Diff two JSON reports written by `eval --report`.
    Compare { a: PathBuf, b: PathBuf },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Write a generated task suite as a JSON-lines dataset.
    Gen(GenArgs),
}

#[derive(Subcommand)]
enum TraceCommand {
    Show { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Nextqa,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, required_unless_present = "oracle")]
    config: Option<PathBuf>,
    /// Use the built-in synthetic oracles instead of a config file.
    #[arg(long, conflicts_with = "config")]
    oracle: bool,
    /// Prover score jitter for `--oracle`.
    #[arg(long, default_value_t = 0.0, requires = "oracle")]
    oracle_noise: f64,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    max_retries: Option<u32>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_mode)]
    grounding_mode: Option<GroundingMode>,
    #[arg(long, value_parser = parse_expansion)]
    expansion: Option<Expansion>,
    #[arg(long)]
    max_depth: Option<u32>,
    #[arg(long)]
    frames_per_video: Option<usize>,
    #[arg(long, value_parser = parse_prover)]
    prover: Option<ProverStyle>,
    #[arg(long)]
    prover_frame_count: Option<usize>,
    #[arg(long)]
    look_around_window: Option<usize>,
    #[arg(long)]
    frames_dir: Option<PathBuf>,
    #[arg(long)]
    captions_dir: Option<PathBuf>,
    /// `{task_id: [start_s, end_s]}` JSON for ground-truth grounding.
    #[arg(long)]
    intervals: Option<PathBuf>,
    #[arg(long)]
    failure_threshold: Option<f64>,
    /// Directory for per-task traces.
    #[arg(long, default_value = "traces")]
    traces: PathBuf,
    /// Where to write the JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DebiasArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
    max_attempts: u32,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Plant near-miss distractors from outside the evidence window.
    #[arg(long)]
    adversarial: bool,
    /// Generate the lexical-shortcut suite instead.
    #[arg(long, conflicts_with = "adversarial")]
    bias: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write ground-truth evidence intervals here.
    #[arg(long)]
    intervals: Option<PathBuf>,
    /// Also write the generated worlds here.
    #[arg(long)]
    worlds: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<GroundingMode, String> {
    GroundingMode::parse(s).ok_or_else(|| format!("unknown grounding mode {s}"))
}

fn parse_expansion(s: &str) -> Result<Expansion, String> {
    match s {
        "dynamic" => Ok(Expansion::Dynamic),
        "static" => Ok(Expansion::Static),
        _ => Err(format!("unknown expansion {s}")),
    }
}

fn parse_prover(s: &str) -> Result<ProverStyle, String> {
    match s {
        "video" => Ok(ProverStyle::Video),
        "image" => Ok(ProverStyle::Image),
        _ => Err(format!("unknown prover {s}")),
    }
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::synthetic(self.oracle_noise),
        };
        if let Some(d) = &self.cache_dir {
            cfg.run.cache_dir = Some(d.clone());
        }
        if let Some(c) = self.concurrency {
            cfg.run.concurrency = c;
        }
        if let Some(r) = self.max_retries {
            cfg.run.max_retries = r;
        }
        Ok(cfg)
    }

    fn dataset(&self) -> Result<groundtree::qa::Dataset> {
        let hint = self.format.map(|f| match f {
            Format::Jsonl => FormatHint::JsonLines,
            Format::Nextqa => FormatHint::NextQaCsv,
        });
        load_dataset(&self.dataset, hint).with_context(|| format!("loading {}", self.dataset.display()))
    }
}

fn eval(args: EvalArgs) -> Result<i32> {
    let mut cfg = args.common.config()?;
    let r = &mut cfg.run;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field.clone() { r.$field = v.into(); })* };
    }
    set!(grounding_mode, expansion, max_depth, frames_per_video, prover, prover_frame_count, look_around_window, failure_threshold);
    if let Some(d) = &args.frames_dir {
        r.frames_dir = Some(d.clone());
        r.video_source = VideoSourceKind::Frames;
    }
    if let Some(d) = &args.captions_dir {
        r.captions_dir = Some(d.clone());
    }
    if let Some(p) = &args.intervals {
        r.intervals = Some(p.clone());
    }
    cfg.validate()?;

    let dataset = args.common.dataset()?;
    let providers = cfg.build_providers(false)?;
    let source = cfg.video_source()?;
    let captions = cfg.caption_store();
    let intervals = cfg.intervals()?;
    if cfg.run.grounding_mode == GroundingMode::GroundTruthIntervals && intervals.is_none() {
        anyhow::bail!("ground_truth_intervals mode needs --intervals");
    }
    let ctx = TaskContext {
        video: source.as_ref(),
        captions: captions.as_ref(),
        intervals: intervals.as_ref(),
    };
    let outcome = run_eval(&dataset, &cfg, &providers, ctx, Some(&args.traces))?;
    print!("{}", render_report(&outcome.report));
    eprintln!(
        "wall time {:.2}s, {} backend calls, {} cache hits",
        outcome.stats.wall_time.as_secs_f64(),
        outcome.stats.backend_calls,
        outcome.stats.cache_hits
    );
    if let Some(p) = &args.report {
        std::fs::write(p, outcome.report.to_json()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(exit_code(&outcome.report, cfg.run.failure_threshold))
}

fn debias(args: DebiasArgs) -> Result<i32> {
    let cfg = args.common.config()?;
    let dataset = args.common.dataset()?;
    let providers = cfg.build_providers(false)?;
    let out = rewrite_dataset(&providers, &dataset, args.max_attempts);
    save_dataset(&out.dataset, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "{} rewritten, {} kept unchanged, written to {}",
        out.accepted.len(),
        out.failed.len(),
        args.out.display()
    );
    for (id, reason) in &out.failed {
        println!("- {id}: {reason}");
    }
    Ok(if !dataset.tasks.is_empty() && out.accepted.is_empty() { 2 } else { 0 })
}

fn probe(args: ProbeArgs) -> Result<i32> {
    let cfg = args.common.config()?;
    let dataset = args.common.dataset()?;
    let providers = cfg.build_providers(true)?;
    let (_, report, _) = probe_dataset(&providers, &dataset)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!(
            "{} ({}): blind accuracy {:.1}% over {} tasks, {} abstained",
            report.dataset,
            report.variant,
            100.0 * report.blind_accuracy,
            report.n,
            report.abstained
        );
        for (t, s) in &report.per_type {
            println!("  {t}: {:.1}% ({}/{})", 100.0 * s.accuracy, s.correct, s.n);
        }
    }
    Ok(0)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn synth_gen(args: GenArgs) -> Result<i32> {
    if args.bias {
        let d = bias_suite(args.seed, args.n);
        save_dataset(&d, &args.out)?;
        println!("{} tasks written to {}", d.tasks.len(), args.out.display());
        return Ok(0);
    }
    let params = RunConfig::default().world_params();
    let suite = generate_suite(args.seed, args.n, args.adversarial, &params)?;
    save_dataset(&suite.dataset, &args.out)?;
    if let Some(p) = &args.intervals {
        write_json(p, &suite.intervals())?;
    }
    if let Some(p) = &args.worlds {
        write_json(p, &suite.worlds.values().collect::<Vec<_>>())?;
    }
    println!(
        "{} tasks written to {} ({} worlds resampled)",
        suite.dataset.tasks.len(),
        args.out.display(),
        suite.resamples
    );
    Ok(0)
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Eval(a) => eval(a),
        Command::Debias(a) => debias(a),
        Command::ProbeBias(a) => probe(a),
        Command::Synth {
            command: SynthCommand::Gen(a),
        } => synth_gen(a),
        Command::Trace {
            command: TraceCommand::Show { path },
        } => {
            print!("{}", render_trace(&load_trace(&path)?));
            Ok(0)
        }
        Command::Compare { a, b } => {
            let c = compare_runs(&read_report(&a)?, &read_report(&b)?)?;
            print!("{}", render_comparison(&c));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            // Anything that stops a run before it produces a report counts
            // as a setup error; task-level failures are reported above.
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
