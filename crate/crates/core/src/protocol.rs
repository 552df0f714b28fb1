//! The detection-before-learning evaluation loop.
//!
//! For every seed the first task is learned, then for `K = 2..=N` every
//! detector scores the test data of tasks `1..K-1` (in-distribution) and of
//! task `K` (out-of-distribution) against the frozen model `h_{K-1}`, after
//! which task `K` is learned. Detectors that want calibration data must go
//! through [`AccessGate`], which only releases the training split of task
//! `K-1` and exemplars of tasks `<= K-2`.

use std::cell::Cell;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::continual::{learn_task, split_tasks, Dataset, ExemplarMemory, LabeledSet, TaskManifest, TaskSequence};
use crate::data::{cifar100_paths, generate, load_cifar100_binary, read_csv_dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::DetectionMetrics;
use crate::model::{MicroClassifier, TrainConfig};
use crate::ndcore::Prng;
use crate::ood::{score_many, ScoredBatch, ScorerSpec};

pub const REPORT_SCHEMA: &str = "oodcl-report";
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Cifar100 { dir: PathBuf },
    Csv { dir: PathBuf },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Synthetic(spec) => generate(spec),
            DataSource::Cifar100 { dir } => {
                let (train, test) = cifar100_paths(dir);
                load_cifar100_binary(&train, &test)
            }
            DataSource::Csv { dir } => read_csv_dataset(dir),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Number of tasks `N`; defaults to all classes of the source.
    pub tasks: Option<usize>,
    /// Classes per task `M`.
    pub step_size: usize,
    pub seeds: Vec<u64>,
    pub scorers: Vec<ScorerSpec>,
    pub train: TrainConfig,
    pub hidden: Vec<usize>,
    /// Exemplar budget; `None` keeps the 2000-per-50000 ratio of the full
    /// CIFAR-100 setting, i.e. 4% of the training set.
    pub memory_capacity: Option<usize>,
    pub normalize_features: bool,
    pub source: DataSource,
}

/// Exemplars per training sample when no explicit budget is set.
pub const MEMORY_FRACTION: f64 = 2000.0 / 50000.0;

/// Exemplar budget for a training set of `train_len` samples.
pub fn scaled_memory_capacity(train_len: usize) -> usize {
    ((train_len as f64 * MEMORY_FRACTION).round() as usize).max(1)
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            tasks: None,
            step_size: 5,
            seeds: (0..5).collect(),
            scorers: ["msp", "odin", "energy", "ours", "ours-no-bc", "ours-no-ce"]
                .iter()
                .map(|m| m.parse().expect("built-in method"))
                .collect(),
            train: TrainConfig::default(),
            hidden: vec![64, 64],
            memory_capacity: None,
            normalize_features: false,
            source: DataSource::Synthetic(SyntheticSpec::default()),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_size < 2 {
            return Err(Error::Config("step size must be >= 2".into()));
        }
        if let Some(n) = self.tasks {
            if n < 2 {
                return Err(Error::Config("at least 2 tasks are needed".into()));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is needed".into()));
        }
        if self.scorers.is_empty() {
            return Err(Error::Config("at least one scorer is needed".into()));
        }
        for s in &self.scorers {
            s.validate()?;
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        self.train.validate()
    }
}

/// Calibration data a detector may ask for; task numbers are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataRequest {
    TrainSplit(usize),
    Exemplars(usize),
    TestSplit(usize),
}

impl std::fmt::Display for DataRequest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataRequest::TrainSplit(t) => write!(f, "training split of task {t}"),
            DataRequest::Exemplars(t) => write!(f, "exemplars of task {t}"),
            DataRequest::TestSplit(t) => write!(f, "test split of task {t}"),
        }
    }
}

/// Data released by the gate.
#[derive(Debug)]
pub enum Granted<'a> {
    TrainSplit(&'a LabeledSet),
    Exemplars(Vec<&'a [f64]>),
}

/// Releases only what may be used before learning task `step`.
pub struct AccessGate<'a> {
    step: usize,
    tasks: &'a TaskSequence,
    memory: &'a ExemplarMemory,
    grants: Cell<usize>,
}

impl<'a> AccessGate<'a> {
    pub fn new(step: usize, tasks: &'a TaskSequence, memory: &'a ExemplarMemory) -> Self {
        Self {
            step,
            tasks,
            memory,
            grants: Cell::new(0),
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Number of successful data releases so far.
    pub fn grants(&self) -> usize {
        self.grants.get()
    }

    pub fn enforce_access(&self, request: DataRequest) -> Result<Granted<'a>> {
        let k = self.step;
        let violation = || Error::AccessViolation {
            step: k,
            request: request.to_string(),
        };
        let granted = match request {
            DataRequest::TrainSplit(t) if k >= 2 && t == k - 1 => {
                Granted::TrainSplit(&self.tasks.tasks[t - 1].train)
            }
            DataRequest::Exemplars(t) if t >= 1 && t + 2 <= k => Granted::Exemplars(
                self.memory
                    .exemplars()
                    .filter(|(_, e)| e.task + 1 == t)
                    .map(|(_, e)| e.features.as_slice())
                    .collect(),
            ),
            _ => return Err(violation()),
        };
        self.grants.set(self.grants.get() + 1);
        Ok(granted)
    }
}

/// Anything that turns a frozen model into per-sample confidence scores.
pub trait Detector {
    fn name(&self) -> String;

    /// Calibration data wanted before scoring at `step`. Post-hoc detectors want none.
    fn requests(&self, _step: usize) -> Vec<DataRequest> {
        Vec::new()
    }

    fn score_batch(&self, model: &MicroClassifier, inputs: &[&[f64]], step_size: usize) -> Result<Vec<f64>>;
}

impl Detector for ScorerSpec {
    fn name(&self) -> String {
        ScorerSpec::name(self)
    }

    fn score_batch(&self, model: &MicroClassifier, inputs: &[&[f64]], step_size: usize) -> Result<Vec<f64>> {
        score_many(self, model, inputs, step_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub scorer: String,
    pub seed: u64,
    /// 1-based index of the task about to be learned.
    pub step: usize,
    pub learned_classes: usize,
    pub new_classes: usize,
    pub n_id: usize,
    pub n_ood: usize,
    pub auroc: f64,
    pub aupr: f64,
    pub fpr95: f64,
    /// Mean ID score minus mean OOD score.
    pub confidence_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub auroc: f64,
    pub aupr: f64,
    pub fpr95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerSummary {
    pub scorer: String,
    /// Mean over seeds of the per-seed step averages.
    pub auroc: f64,
    pub aupr: f64,
    pub fpr95: f64,
    pub per_seed: Vec<SeedSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub schema: String,
    pub schema_version: u32,
    pub config: ProtocolConfig,
    pub manifests: Vec<TaskManifest>,
    pub steps: Vec<StepRecord>,
    pub summary: Vec<ScorerSummary>,
    /// Calibration data releases across the whole run.
    pub access_grants: usize,
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    s / n as f64
}

fn summarize(names: &[String], seeds: &[u64], steps: &[StepRecord]) -> Vec<ScorerSummary> {
    names
        .iter()
        .map(|name| {
            let per_seed: Vec<SeedSummary> = seeds
                .iter()
                .map(|&seed| {
                    let rows: Vec<&StepRecord> = steps
                        .iter()
                        .filter(|r| &r.scorer == name && r.seed == seed)
                        .collect();
                    SeedSummary {
                        seed,
                        auroc: mean(rows.iter().map(|r| r.auroc)),
                        aupr: mean(rows.iter().map(|r| r.aupr)),
                        fpr95: mean(rows.iter().map(|r| r.fpr95)),
                    }
                })
                .collect();
            ScorerSummary {
                scorer: name.clone(),
                auroc: mean(per_seed.iter().map(|s| s.auroc)),
                aupr: mean(per_seed.iter().map(|s| s.aupr)),
                fpr95: mean(per_seed.iter().map(|s| s.fpr95)),
                per_seed,
            }
        })
        .collect()
}

/// Loads the configured source and runs every configured scorer.
pub fn run(cfg: &ProtocolConfig) -> Result<DetectionReport> {
    cfg.validate()?;
    let dataset = cfg.source.load()?;
    let detectors: Vec<&dyn Detector> = cfg.scorers.iter().map(|s| s as &dyn Detector).collect();
    run_with(cfg, &dataset, &detectors)
}

/// Runs the protocol on `dataset` with explicit detectors (the configured
/// scorer list only provides the echo in the report).
pub fn run_with(cfg: &ProtocolConfig, dataset: &Dataset, detectors: &[&dyn Detector]) -> Result<DetectionReport> {
    cfg.validate()?;
    if detectors.is_empty() {
        return Err(Error::Config("at least one detector is needed".into()));
    }
    let m = cfg.step_size;
    let n_tasks = cfg.tasks.unwrap_or(dataset.num_classes / m);
    let required = n_tasks * m;
    if n_tasks < 2 || required > dataset.num_classes {
        return Err(Error::ClassShortfall {
            required: required.max(2 * m),
            available: dataset.num_classes,
        });
    }
    let dataset = if required < dataset.num_classes {
        dataset.restrict_classes(required)
    } else {
        dataset.clone()
    };
    let names: Vec<String> = detectors.iter().map(|d| d.name()).collect();
    let capacity = cfg
        .memory_capacity
        .unwrap_or_else(|| scaled_memory_capacity(dataset.train.len()));

    let mut manifests = Vec::new();
    let mut steps = Vec::new();
    let mut access_grants = 0;
    for &seed in &cfg.seeds {
        let seq = split_tasks(&dataset, m, seed)?;
        manifests.push(seq.manifest());
        let train_cfg = TrainConfig {
            seed: Prng::derive(seed, 0x7EA1).next_u64(),
            ..cfg.train.clone()
        };
        let mut model = MicroClassifier::new(dataset.input_dim(), &cfg.hidden, seed)?;
        let mut memory = ExemplarMemory::new(capacity);

        learn_task(&mut model, &seq.tasks[0].train.features(), 0, &mut memory, m, &train_cfg, cfg.normalize_features)?;
        for k in 2..=n_tasks {
            let gate = AccessGate::new(k, &seq, &memory);
            let mut inputs: Vec<&[f64]> = Vec::new();
            let mut is_id = Vec::new();
            for task in &seq.tasks[..k] {
                let id = task.index + 1 < k;
                for s in task.test.samples() {
                    inputs.push(&s.features);
                    is_id.push(id);
                }
            }
            for (det, name) in detectors.iter().zip(&names) {
                for req in det.requests(k) {
                    gate.enforce_access(req)?;
                }
                let scores = det.score_batch(&model, &inputs, m)?;
                let batch = ScoredBatch::new(scores, is_id.clone())?;
                let metrics = DetectionMetrics::compute(&batch)?;
                steps.push(StepRecord {
                    scorer: name.clone(),
                    seed,
                    step: k,
                    learned_classes: (k - 1) * m,
                    new_classes: m,
                    n_id: metrics.n_id,
                    n_ood: metrics.n_ood,
                    auroc: metrics.auroc,
                    aupr: metrics.aupr,
                    fpr95: metrics.fpr95,
                    confidence_gap: batch.confidence_gap(),
                });
            }
            access_grants += gate.grants();
            learn_task(
                &mut model,
                &seq.tasks[k - 1].train.features(),
                k - 1,
                &mut memory,
                m,
                &train_cfg,
                cfg.normalize_features,
            )?;
        }
    }
    let summary = summarize(&names, &cfg.seeds, &steps);
    Ok(DetectionReport {
        schema: REPORT_SCHEMA.into(),
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        manifests,
        steps,
        summary,
        access_grants,
    })
}

impl DetectionReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One row per (scorer, seed, step).
    pub fn steps_csv(&self) -> String {
        let mut out = String::from("scorer,seed,step,learned_classes,new_classes,n_id,n_ood,auroc,aupr,fpr95,confidence_gap\n");
        for r in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.scorer, r.seed, r.step, r.learned_classes, r.new_classes, r.n_id, r.n_ood, r.auroc, r.aupr, r.fpr95,
                r.confidence_gap
            );
        }
        out
    }

    /// Averaged results, one row per scorer.
    pub fn summary_table(&self) -> String {
        let width = self.summary.iter().map(|s| s.scorer.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}  {:>8}  {:>8}  {:>8}\n", "method", "AUROC↑", "AUPR↑", "FPR95↓");
        for s in &self.summary {
            let _ = writeln!(out, "{:<width$}  {:>8.4}  {:>8.4}  {:>8.4}", s.scorer, s.auroc, s.aupr, s.fpr95);
        }
        out
    }

    pub fn summary_for(&self, scorer: &str) -> Option<&ScorerSummary> {
        self.summary.iter().find(|s| s.scorer == scorer)
    }
}
