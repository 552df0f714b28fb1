use std::cell::RefCell;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use oodcl::data::{generate, SyntheticSpec};
use oodcl::model::{MicroClassifier, TrainConfig};
use oodcl::ood::ScorerSpec;
use oodcl::protocol::{run, run_with, DataRequest, DataSource, Detector, ProtocolConfig};
use oodcl::Error;

fn small_config(tasks: usize, step: usize, classes: usize) -> ProtocolConfig {
    ProtocolConfig {
        tasks: Some(tasks),
        step_size: step,
        seeds: vec![0, 1],
        train: TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        },
        hidden: vec![16],
        source: DataSource::Synthetic(SyntheticSpec {
            classes,
            dim: 8,
            train_per_class: 20,
            test_per_class: 10,
            ..SyntheticSpec::default()
        }),
        ..ProtocolConfig::default()
    }
}

#[test]
fn event_counts_and_id_sizes() {
    let cfg = small_config(5, 4, 20);
    let report = run(&cfg).unwrap();
    for scorer in &cfg.scorers {
        for &seed in &cfg.seeds {
            let rows: Vec<_> = report
                .steps
                .iter()
                .filter(|r| r.scorer == scorer.name() && r.seed == seed)
                .collect();
            assert_eq!(rows.len(), 4);
            for r in rows {
                assert_eq!(r.n_id, (r.step - 1) * 4 * 10);
                assert_eq!(r.n_ood, 4 * 10);
                assert_eq!(r.learned_classes, (r.step - 1) * 4);
            }
        }
    }
    assert_eq!(report.access_grants, 0);
}

struct Greedy;

impl Detector for Greedy {
    fn name(&self) -> String {
        "greedy".into()
    }
    fn requests(&self, step: usize) -> Vec<DataRequest> {
        if step == 3 {
            vec![DataRequest::TrainSplit(1)]
        } else {
            Vec::new()
        }
    }
    fn score_batch(&self, model: &MicroClassifier, inputs: &[&[f64]], m: usize) -> oodcl::Result<Vec<f64>> {
        ScorerSpec::msp().score_batch(model, inputs, m)
    }
}

#[test]
fn out_of_policy_request_is_rejected() {
    let cfg = small_config(4, 3, 12);
    let data = cfg.source.load().unwrap();
    let err = run_with(&cfg, &data, &[&Greedy]).unwrap_err();
    match err {
        Error::AccessViolation { step, request } => {
            assert_eq!(step, 3);
            assert!(request.contains("task 1"));
        }
        other => panic!("unexpected error {other}"),
    }
}

struct Polite;

impl Detector for Polite {
    fn name(&self) -> String {
        "polite".into()
    }
    fn requests(&self, step: usize) -> Vec<DataRequest> {
        let mut r = vec![DataRequest::TrainSplit(step - 1)];
        if step >= 3 {
            r.push(DataRequest::Exemplars(step - 2));
        }
        r
    }
    fn score_batch(&self, model: &MicroClassifier, inputs: &[&[f64]], m: usize) -> oodcl::Result<Vec<f64>> {
        ScorerSpec::msp().score_batch(model, inputs, m)
    }
}

#[test]
fn in_policy_requests_are_counted() {
    let cfg = small_config(4, 3, 12);
    let data = cfg.source.load().unwrap();
    let report = run_with(&cfg, &data, &[&Polite]).unwrap();
    // per seed: 3 train splits + 2 exemplar sets
    assert_eq!(report.access_grants, 2 * 5);
}

#[derive(Default)]
struct Recorder {
    name: &'static str,
    seen: RefCell<Vec<u64>>,
}

impl Detector for Recorder {
    fn name(&self) -> String {
        self.name.into()
    }
    fn score_batch(&self, model: &MicroClassifier, inputs: &[&[f64]], m: usize) -> oodcl::Result<Vec<f64>> {
        let mut h = DefaultHasher::new();
        serde_json::to_string(model).unwrap().hash(&mut h);
        self.seen.borrow_mut().push(h.finish());
        ScorerSpec::ours().score_batch(model, inputs, m)
    }
}

#[test]
fn detectors_share_the_frozen_snapshot() {
    let cfg = small_config(4, 3, 12);
    let data = cfg.source.load().unwrap();
    let a = Recorder { name: "a", ..Default::default() };
    let b = Recorder { name: "b", ..Default::default() };
    run_with(&cfg, &data, &[&a, &b]).unwrap();
    let a = a.seen.into_inner();
    let b = b.seen.into_inner();
    assert_eq!(a.len(), 2 * 3);
    assert_eq!(a, b);
    let mut distinct = a.clone();
    distinct.sort_unstable();
    distinct.dedup();
    assert_eq!(distinct.len(), a.len());
}

#[test]
fn reports_are_reproducible() {
    let cfg = small_config(3, 3, 9);
    let a = run(&cfg).unwrap().to_json().unwrap();
    let b = run(&cfg).unwrap().to_json().unwrap();
    assert_eq!(a, b);
    let parsed = oodcl::protocol::DetectionReport::from_json(&a).unwrap();
    assert_eq!(parsed.to_json().unwrap(), a);
}

#[test]
fn class_shortfall_is_reported() {
    let cfg = small_config(5, 4, 12);
    assert!(matches!(run(&cfg), Err(Error::ClassShortfall { .. })));
    let data = generate(&SyntheticSpec {
        classes: 3,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let mut cfg = small_config(2, 2, 3);
    cfg.tasks = None;
    assert!(matches!(
        run_with(&cfg, &data, &[&ScorerSpec::msp()]),
        Err(Error::ClassShortfall { .. })
    ));
}
