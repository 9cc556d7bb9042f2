use std::path::Path;
use std::process::{Command, Output};

fn groundtree(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groundtree"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen(dir: &Path, n: &str) {
    let o = groundtree(
        dir,
        &["synth", "gen", "--seed", "4", "--n", n, "--adversarial", "--out", "suite.jsonl", "--intervals", "iv.json"],
    );
    assert!(o.status.success(), "{o:?}");
}

#[test]
fn eval_compare_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "6");
    let o = groundtree(d, &["eval", "--oracle", "--dataset", "suite.jsonl", "--report", "g.json", "--traces", "tg"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("| overall | 6 | 6 | 100.0 |"));
    let o = groundtree(
        d,
        &["eval", "--oracle", "--dataset", "suite.jsonl", "--grounding-mode", "full_video", "--report", "f.json", "--traces", "tf"],
    );
    assert_eq!(o.status.code(), Some(0));
    let o = groundtree(d, &["compare", "f.json", "g.json"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("accuracy (pp) | +"));
    let trace = std::fs::read_dir(d.join("tg"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "json"))
        .unwrap();
    let o = groundtree(d, &["trace", "show", trace.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("[selected, correct]"));
}

#[test]
fn ground_truth_intervals_mode() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "3");
    let o = groundtree(
        d,
        &["eval", "--oracle", "--dataset", "suite.jsonl", "--grounding-mode", "ground_truth_intervals", "--intervals", "iv.json"],
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    std::fs::write(d.join("none.json"), "{}").unwrap();
    let o = groundtree(
        d,
        &["eval", "--oracle", "--dataset", "suite.jsonl", "--grounding-mode", "ground_truth_intervals", "--intervals", "none.json"],
    );
    assert_eq!(o.status.code(), Some(2), "every task lacks an interval");
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "2");
    let o = groundtree(d, &["eval", "--config", "missing.toml", "--dataset", "suite.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::write(d.join("bad.toml"), "[run]\nmax_depth = 0\n").unwrap();
    let o = groundtree(d, &["eval", "--config", "bad.toml", "--dataset", "suite.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn debias_then_probe() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(groundtree(d, &["synth", "gen", "--bias", "--n", "20", "--out", "bias.jsonl"]).status.success());
    let o = groundtree(d, &["debias", "--oracle", "--dataset", "bias.jsonl", "--out", "rw.jsonl"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("20 rewritten"));
    let o = groundtree(d, &["probe-bias", "--oracle", "--dataset", "rw.jsonl", "--json"]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["variant"], "Rewritten");
    assert!(report["blind_accuracy"].as_f64().unwrap() < 1.0);
}
