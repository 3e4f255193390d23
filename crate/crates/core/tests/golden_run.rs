mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use anchor_core::gateway::mock::{FixtureProvider, RecordingProvider};
use anchor_core::gateway::world::ScriptedWorld;
use anchor_core::harness::pipeline::{run_pipeline, unknown_rate_curve, RunOptions, RunOutcome};
use anchor_core::{Condition, Factor};
use common::*;

fn run(options: &RunOptions) -> RunOutcome {
    let config = golden_config();
    run_pipeline(&golden_gateway(&config), &golden_dataset(), &config, options).unwrap()
}

fn fingerprint(outcome: &RunOutcome) -> String {
    let mappings: Vec<_> = outcome.scenarios.iter().map(|s| (&s.mappings, &s.reports)).collect();
    serde_json::to_string(&(&outcome.report, mappings)).unwrap()
}

const PATHOGEN: &str = "Hot water helps in killing any potential foodborne pathogens or microbes present in the noodles.";

#[test]
fn repeated_runs_are_bit_identical() {
    let started = Instant::now();
    let a = run(&RunOptions::default());
    assert!(started.elapsed() < Duration::from_secs(10));
    let b = run(&RunOptions::default());
    assert_eq!(fingerprint(&a), fingerprint(&b));
    assert!(a.report.failures.is_empty());
    assert_eq!(a.report.metrics.instances, 6);
    assert_eq!(a.scenarios.iter().map(|s| s.reports.len()).sum::<usize>(), 12);
}

#[test]
fn warm_cache_matches_cold_run() {
    let dir = tempfile::tempdir().unwrap();
    let options = RunOptions {
        cache_dir: Some(dir.path().to_path_buf()),
        ..RunOptions::default()
    };
    let cold = run(&options);
    assert!(cold.scenarios.iter().all(|s| !s.cache_hit));
    assert!(cold.cost.ledger.space_calls() > 0);
    let warm = run(&options);
    assert!(warm.scenarios.iter().all(|s| s.cache_hit));
    assert_eq!(warm.cost.ledger.space_calls(), 0);
    assert_eq!(fingerprint(&cold), fingerprint(&warm));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 3);
}

#[test]
fn pathogen_condition_reaches_food_safety() {
    let outcome = run(&RunOptions::default());
    let noodles = outcome.scenarios.iter().find(|s| s.scenario.id == "noodles").unwrap();
    let condition = Condition::new(PATHOGEN, "noodles").unwrap();
    let mapping = noodles
        .mappings
        .iter()
        .find(|m| m.condition_id == condition.id)
        .unwrap();
    let food_safety = Factor::from_text("food safety (reduces risk of foodborne illness)").unwrap();
    assert!(!mapping.abstained);
    assert!(mapping.final_set.contains(&food_safety.id), "{mapping:?}");
}

#[test]
fn mapping_sets_are_nested() {
    let outcome = run(&RunOptions::default());
    let mut reflected = 0;
    for s in &outcome.scenarios {
        for m in &s.mappings {
            assert!(m.final_set.is_subset(&m.voted));
            assert!(m.voted.is_subset(&m.candidates));
            assert_eq!(m.abstained, m.final_set.is_empty());
            reflected += m.voted.len() - m.final_set.len();
        }
        for (m, r) in s.mappings.iter().zip(&s.reports) {
            assert_eq!(m.condition_id, r.condition_id);
            assert_eq!(m.abstained, r.p_final.is_none());
        }
    }
    // the altitude condition loses one factor on reflection
    assert_eq!(reflected, 1);
}

#[test]
fn unmappable_condition_is_unknown() {
    let outcome = run(&RunOptions::default());
    let led = outcome.scenarios.iter().find(|s| s.scenario.id == "led").unwrap();
    let condition = Condition::new("The bulbs are painted a pleasant warm colour.", "led").unwrap();
    let report = led.reports.iter().find(|r| r.condition_id == condition.id).unwrap();
    assert!(report.abstained && report.p_final.is_none());
    assert!(outcome.report.metrics.unknown_rate > 0.0);
}

#[test]
fn reports_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&RunOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..RunOptions::default()
    });
    for name in ["metrics.json", "metrics.txt", "cost.json", "mappings.jsonl", "reports.jsonl"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let lines = std::fs::read_to_string(dir.path().join("reports.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 12);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["metrics"]["instances"], 6);
    assert_eq!(metrics["config_digest"], outcome.report.config_digest);
}

#[test]
fn recorded_exchanges_replay_identically() {
    let config = golden_config();
    let recorder = Arc::new(RecordingProvider::new(golden_world()));
    let live = run_pipeline(
        &gateway_with(recorder.clone(), &config),
        &golden_dataset(),
        &config,
        &RunOptions::default(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixtures.jsonl");
    recorder.write_jsonl(&path).unwrap();

    let replay = FixtureProvider::from_jsonl(&path).unwrap();
    assert!(!replay.is_empty());
    let replayed = run_pipeline(
        &gateway_with(Arc::new(replay), &config),
        &golden_dataset(),
        &config,
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(fingerprint(&live), fingerprint(&replayed));
}

#[test]
fn unreachable_scenario_is_isolated() {
    let mut spec = golden_world().spec().clone();
    spec.scenarios.iter_mut().find(|s| s.id == "led").unwrap().unreachable = true;
    let config = golden_config();
    let gw = gateway_with(Arc::new(ScriptedWorld::new(spec).unwrap()), &config);
    let outcome = run_pipeline(&gw, &golden_dataset(), &config, &RunOptions::default()).unwrap();
    assert_eq!(outcome.report.failures.len(), 1);
    assert_eq!(outcome.report.failures[0].scenario_id, "led");
    assert_eq!(outcome.report.metrics.instances, 4);
}

#[test]
fn unknown_rate_falls_as_factors_grow() {
    let config = golden_config();
    let counts = [0, 1, 2, 4, 6, 8, 12, 40];
    let points = unknown_rate_curve(&golden_gateway(&config), &golden_dataset(), &config, &counts, None).unwrap();
    assert_eq!(points.len(), counts.len());
    assert_eq!(points[0].unknown_rate, 1.0);
    for w in points.windows(2) {
        assert!(w[1].unknown_rate <= w[0].unknown_rate, "{points:?}");
    }
    assert!(points.last().unwrap().unknown_rate < 1.0);
}
