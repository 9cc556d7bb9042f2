use std::sync::Arc;

use groundtree::grounding::GroundingMode;
use groundtree::providers::{ProviderRole, ProviderSet};
use groundtree::synth::{generate_suite, Suite, SynthSource, WorldOracle, WorldParams};
use groundtree::tree::{evaluate_task, Expansion, NodeStatus, TaskContext, TreeConfig};

fn providers(noise: f64) -> ProviderSet {
    ProviderSet::builder()
        .default_backend(Arc::new(WorldOracle::new(WorldParams::default(), noise)))
        .build()
}

fn accuracy(suite: &Suite, set: &ProviderSet, config: &TreeConfig) -> f64 {
    let source = SynthSource {
        params: WorldParams::default(),
    };
    let intervals = suite.intervals();
    let ctx = TaskContext {
        video: &source,
        captions: None,
        intervals: Some(&intervals),
    };
    let correct = suite
        .dataset
        .tasks
        .iter()
        .filter(|t| {
            let (forest, _) = evaluate_task(t, set, config, ctx);
            forest.unwrap().correct().unwrap()
        })
        .count();
    correct as f64 / suite.dataset.tasks.len() as f64
}

#[test]
fn grounded_oracle_answers_every_task() {
    let suite = generate_suite(11, 30, false, &WorldParams::default()).unwrap();
    assert_eq!(accuracy(&suite, &providers(0.0), &TreeConfig::default()), 1.0);
}

#[test]
fn ground_truth_intervals_match_grounding() {
    let suite = generate_suite(12, 30, true, &WorldParams::default()).unwrap();
    let cfg = TreeConfig {
        grounding_mode: GroundingMode::GroundTruthIntervals,
        ..Default::default()
    };
    assert_eq!(accuracy(&suite, &providers(0.0), &cfg), 1.0);
}

#[test]
fn full_video_is_fooled_by_adversarial_distractors() {
    let suite = generate_suite(13, 30, true, &WorldParams::default()).unwrap();
    let set = providers(0.0);
    let grounded = accuracy(&suite, &set, &TreeConfig::default());
    let full = accuracy(
        &suite,
        &set,
        &TreeConfig {
            grounding_mode: GroundingMode::FullVideo,
            ..Default::default()
        },
    );
    assert_eq!(grounded, 1.0);
    assert!(full < grounded, "full {full} grounded {grounded}");
}

#[test]
fn grounding_runs_once_and_captions_chain() {
    let suite = generate_suite(14, 1, false, &WorldParams::default()).unwrap();
    let set = providers(0.0);
    let source = SynthSource {
        params: WorldParams::default(),
    };
    let ctx = TaskContext {
        video: &source,
        captions: None,
        intervals: None,
    };
    let (forest, transcript) = evaluate_task(&suite.dataset.tasks[0], &set, &TreeConfig::default(), ctx);
    let forest = forest.unwrap();
    assert_eq!(transcript.template_count("fact"), 1);
    assert_eq!(transcript.template_count("caption"), 24);
    assert_eq!(transcript.template_count("navigate"), 1);
    let counts = transcript.role_counts();
    assert_eq!(forest.call_counts["captioner"], counts[&ProviderRole::Captioner]);
    for (i, e) in transcript.entries().iter().filter(|e| e.template == "caption").enumerate() {
        let prior = if i == 0 { 0 } else { e.args["previous_captions"].lines().count() };
        assert_eq!(prior, i);
    }
}

#[test]
fn noisy_prover_prunes() {
    let suite = generate_suite(15, 12, false, &WorldParams::default()).unwrap();
    let set = providers(0.2);
    let source = SynthSource {
        params: WorldParams::default(),
    };
    let ctx = TaskContext {
        video: &source,
        captions: None,
        intervals: None,
    };
    let mut pruned = 0;
    for t in &suite.dataset.tasks {
        let (dynamic, _) = evaluate_task(t, &set, &TreeConfig::default(), ctx);
        let (stat, _) = evaluate_task(
            t,
            &set,
            &TreeConfig {
                expansion: Expansion::Static,
                ..Default::default()
            },
            ctx,
        );
        let (dynamic, stat) = (dynamic.unwrap(), stat.unwrap());
        assert!(stat.decomposition_calls.iter().all(|&c| c == 15));
        for (d, s) in dynamic.decomposition_calls.iter().zip(&stat.decomposition_calls) {
            assert!(d <= s);
        }
        pruned += dynamic
            .nodes
            .values()
            .filter(|n| n.status == NodeStatus::LeafPruned)
            .count();
        assert!(dynamic.score_violations().is_empty());
        assert_eq!(dynamic.correct(), Some(true));
    }
    assert!(pruned > 0);
}
