use std::collections::BTreeSet;

use podn::harness::{
    derive_seed, generate_synthetic, open_split, run_experiment, write_run, ExperimentConfig,
    ExperimentReport, Method, SplitConfig, SyntheticSpec,
};

fn quick(method: Method, seed: u64) -> ExperimentConfig {
    let mut c: ExperimentConfig =
        serde_json::from_str(include_str!("../../../configs/reference.json")).unwrap();
    c.train.epochs = 60;
    c.with_method(method).with_seed(seed)
}

#[test]
fn reference_config_parses() {
    let c = quick(Method::PodnRadius, 0);
    assert_eq!(c.split.known_count, 6);
    assert_eq!(c.train.weights.w1, 0.1);
    assert_eq!(c.train.weights.w2, 0.01);
    assert_eq!(c.incremental.trigger, 5);
}

#[test]
fn repeated_runs_are_bit_identical() {
    for method in Method::ALL {
        let a = run_experiment(&quick(method, 3)).unwrap();
        let b = run_experiment(&quick(method, 3)).unwrap();
        assert_eq!(a, b, "{}", method.name());
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
    }
}

#[test]
fn different_seeds_differ() {
    let a = run_experiment(&quick(Method::PodnRadius, 0)).unwrap();
    let b = run_experiment(&quick(Method::PodnRadius, 1)).unwrap();
    assert_ne!(a.report.top1, b.report.top1);
}

#[test]
fn report_round_trips_through_json() {
    let run = run_experiment(&quick(Method::PodnRadius, 2)).unwrap();
    let text = serde_json::to_string_pretty(&run.report).unwrap();
    let back: ExperimentReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, run.report);
}

#[test]
fn split_keeps_unknowns_out_of_initial_training() {
    for seed in 0..5 {
        let c = quick(Method::PodnRadius, seed);
        let ds = generate_synthetic(&SyntheticSpec {
            seed: derive_seed(seed, 1),
            ..SyntheticSpec::default()
        })
        .unwrap();
        let split = open_split(&ds, &SplitConfig::default(), derive_seed(seed, 2)).unwrap();
        assert_eq!(split.known_labels.len(), c.split.known_count);
        assert_eq!(split.unknown_labels.len(), 5);
        assert!(split.initial_train.iter().all(|s| split.is_known(&s.label)));

        let train: BTreeSet<usize> = split.initial_train.iter().map(|s| s.id).collect();
        let stream: BTreeSet<usize> = split.incremental.iter().map(|s| s.id).collect();
        let test: BTreeSet<usize> = split.test.iter().map(|s| s.id).collect();
        assert!(train.is_disjoint(&stream) && train.is_disjoint(&test) && stream.is_disjoint(&test));
        assert_eq!(stream, split.oracle_labels.keys().copied().collect());
        for label in split.known_labels.iter().chain(&split.unknown_labels) {
            let n = split.oracle_labels.values().filter(|l| *l == label).count();
            assert!(n >= 10, "{label} has {n} stream samples");
        }
    }
}

#[test]
fn report_reflects_the_split() {
    let run = run_experiment(&quick(Method::PodnRadius, 4)).unwrap();
    let r = &run.report;
    assert_eq!(r.known_labels.len(), 6);
    assert_eq!(r.unknown_labels.len(), 5);
    assert!(r.budget.oracle_consulted);
    let inc = r.incremental.as_ref().unwrap();
    assert_eq!(r.budget.stream_labels, inc.labels_consumed);
    assert_eq!(r.budget.total, r.budget.initial_train + r.budget.stream_labels);
    assert_eq!(inc.final_categories, 6 + inc.expansions.len());
    assert!(inc.expansions.iter().all(|e| r.unknown_labels.contains(e)));
    // one oracle call per unknown decision
    let consulted = run.iterations.iter().filter(|i| i.oracle.is_some()).count();
    let flagged = run.iterations.iter().filter(|i| i.decision == "unknown").count();
    assert_eq!(consulted, flagged);
    assert_eq!(consulted, inc.labels_consumed);
}

#[test]
fn closed_baseline_matches_the_open_budget() {
    for seed in 0..3 {
        let open = run_experiment(&quick(Method::PodnRadius, seed)).unwrap().report;
        let closed = run_experiment(&quick(Method::ClosedBaseline, seed)).unwrap().report;
        assert!(!closed.budget.oracle_consulted);
        assert!(closed.detection.is_none());
        assert_eq!(closed.budget.stream_labels, open.budget.stream_labels);
        assert_eq!(closed.budget.initial_train, open.budget.initial_train);
        assert_eq!(closed.budget.total, open.budget.total);
    }
}

#[test]
fn run_directory_holds_every_log() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_experiment(&quick(Method::PodnRadius, 5)).unwrap();
    write_run(&run, dir.path()).unwrap();
    for f in [
        "report.json",
        "training_log.csv",
        "detection.csv",
        "detection_summary.json",
        "incremental_log.csv",
        "incremental_summary.json",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let back: ExperimentReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, run.report);

    let log = std::fs::read_to_string(dir.path().join("training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 60);
    assert!(log.starts_with("epoch,loss1,loss21,loss22,loss2,loss3,total,accuracy,distance_accuracy"));
}
