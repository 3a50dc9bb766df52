use proptest::prelude::*;

use nirs_core::dataset::balance_classes;
use nirs_core::eval::{
    accuracy_of, aggregate, confusion_matrix, evaluate, lookahead_bias_demo, Protocol, ProtocolParams, RunMetrics,
};
use nirs_core::exec::Executor;
use nirs_core::pipeline::{labeled_features, PipelineConfig};
use nirs_core::synth::{gen_group, scenario_preset, Scenario};
use nirs_core::Dataset;

fn short_cohort(n: usize, sigma: f64, seed: u64) -> Vec<Dataset> {
    let mut cfg = scenario_preset(Scenario::ThreeState);
    cfg.protocol.session_s = 90.0;
    cfg.inter_subject_sigma = sigma;
    cfg.seed = seed;
    gen_group(&cfg, n)
        .unwrap()
        .iter()
        .map(|s| balance_classes(&labeled_features(&s.recording, &s.labels, &PipelineConfig::default()).unwrap()).unwrap())
        .collect()
}

fn quick(p: Protocol) -> ProtocolParams {
    ProtocolParams {
        hidden: vec![32, 32],
        epochs: 3,
        ..ProtocolParams::for_protocol(p)
    }
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let cohort = short_cohort(3, 0.2, 1);
    for protocol in [Protocol::Individual, Protocol::Group, Protocol::Loso] {
        let params = quick(protocol);
        let a = evaluate(protocol, &cohort, 2, 40, &params, &Executor::new(1)).unwrap();
        let b = evaluate(protocol, &cohort, 2, 40, &params, &Executor::new(3)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for r in &a.per_run {
            assert_eq!(r.accuracy, accuracy_of(&r.confusion));
        }
    }
}

#[test]
fn group_confusion_rows_count_every_test_sample() {
    let cohort = short_cohort(2, 0.2, 2);
    let reps = 2;
    let report = evaluate(Protocol::Group, &cohort, reps, 0, &quick(Protocol::Group), &Executor::new(0)).unwrap();
    let per_class_test: u64 = cohort
        .iter()
        .map(|ds| (ds.class_counts()[0] as f64 * 0.2 + 1e-9).floor() as u64)
        .sum();
    for row in &report.aggregate.confusion {
        assert_eq!(row.iter().sum::<u64>(), reps as u64 * per_class_test);
    }
}

#[test]
fn loso_matches_group_without_inter_subject_variability() {
    let cohort = short_cohort(3, 0.0, 3);
    let exec = Executor::new(0);
    let group = evaluate(Protocol::Group, &cohort, 1, 0, &ProtocolParams::for_protocol(Protocol::Group), &exec).unwrap();
    let loso = evaluate(Protocol::Loso, &cohort, 1, 0, &ProtocolParams::for_protocol(Protocol::Loso), &exec).unwrap();
    assert_eq!(loso.per_subject.len(), 3);
    assert!((group.aggregate.mean - loso.aggregate.mean).abs() <= 0.05);
}

#[test]
fn protocol_preconditions() {
    let cohort = short_cohort(1, 0.2, 4);
    let exec = Executor::sequential();
    assert!(evaluate(Protocol::Loso, &cohort, 1, 0, &quick(Protocol::Loso), &exec).is_err());
    assert!(evaluate(Protocol::Group, &cohort, 1, 0, &quick(Protocol::Group), &exec).is_err());
    let single = evaluate(Protocol::Individual, &cohort, 1, 0, &quick(Protocol::Individual), &exec).unwrap();
    let a = &single.per_subject[0].aggregate;
    assert_eq!((a.mean, a.std), (a.max, 0.0));
    assert_eq!(a.min, a.max);
}

#[test]
fn bias_demo_is_deterministic() {
    let cohort = short_cohort(1, 0.2, 5);
    let params = quick(Protocol::Individual);
    let a = lookahead_bias_demo(&cohort[0], 2, 9, &params, &Executor::new(1)).unwrap();
    let b = lookahead_bias_demo(&cohort[0], 2, 9, &params, &Executor::new(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.gap, a.shuffled_first.aggregate.mean - a.contiguous.aggregate.mean);
}

proptest! {
    #[test]
    fn accuracy_is_trace_over_total(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200),
    ) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = confusion_matrix(&t, &p, 4).unwrap();
        let hits = t.iter().zip(&p).filter(|(a, b)| a == b).count();
        prop_assert_eq!(accuracy_of(&m), hits as f64 / t.len() as f64);
        for (class, row) in m.iter().enumerate() {
            prop_assert_eq!(row.iter().sum::<u64>() as usize, t.iter().filter(|&&v| v == class).count());
        }
    }

    #[test]
    fn aggregates_ignore_run_order(
        accs in prop::collection::vec(0.0f64..=1.0, 1..40),
        rot in 0usize..40,
    ) {
        let runs: Vec<RunMetrics> = accs
            .iter()
            .enumerate()
            .map(|(i, &a)| RunMetrics { seed: i as u64, subject: None, accuracy: a, confusion: vec![vec![1]] })
            .collect();
        let mut rotated = runs.clone();
        rotated.rotate_left(rot % runs.len());
        rotated.reverse();
        let (a, b) = (aggregate(&runs).unwrap(), aggregate(&rotated).unwrap());
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        prop_assert_eq!(a.std.to_bits(), b.std.to_bits());
        prop_assert!(a.min <= a.mean && a.mean <= a.max && a.std >= 0.0);
    }
}
