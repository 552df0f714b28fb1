//! Unsupervised class-incremental learning: task splits, K-means pseudo
//! labels, a fixed-budget exemplar memory and per-task training with
//! distillation against the previous model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, l2_normalize_rows, KMeansConfig};
use crate::error::{Error, Result};
use crate::model::{MicroClassifier, TrainConfig};
use crate::ndcore::Prng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    /// Task index (0-based); 0 until the set is split into tasks.
    pub task: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self {
            features,
            label,
            task: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    split: Split,
    samples: Vec<Sample>,
}

impl LabeledSet {
    pub fn new(split: Split, samples: Vec<Sample>) -> Self {
        Self { split, samples }
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.features.clone()).collect()
    }
}

/// Train and test splits of one labelled source.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: LabeledSet,
    pub test: LabeledSet,
    pub num_classes: usize,
}

impl Dataset {
    pub fn input_dim(&self) -> usize {
        self.train.samples().first().map_or(0, |s| s.features.len())
    }

    /// Keeps only samples whose label is below `classes`.
    pub fn restrict_classes(&self, classes: usize) -> Dataset {
        let keep = |set: &LabeledSet| {
            LabeledSet::new(
                set.split(),
                set.samples().iter().filter(|s| s.label < classes).cloned().collect(),
            )
        };
        Dataset {
            train: keep(&self.train),
            test: keep(&self.test),
            num_classes: classes.min(self.num_classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub index: usize,
    /// Original dataset labels owned by this task.
    pub source_classes: Vec<usize>,
    pub train: LabeledSet,
    pub test: LabeledSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSequence {
    pub seed: u64,
    pub step_size: usize,
    /// `class_order[i]` is the source class relabelled as `i`.
    pub class_order: Vec<usize>,
    pub tasks: Vec<Task>,
}

/// Everything needed to rebuild a task split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub seed: u64,
    pub step_size: usize,
    pub tasks: usize,
    /// Source class → task index.
    pub class_to_task: BTreeMap<usize, usize>,
    pub class_order: Vec<usize>,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn manifest(&self) -> TaskManifest {
        let class_to_task = self
            .class_order
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i / self.step_size))
            .collect();
        TaskManifest {
            seed: self.seed,
            step_size: self.step_size,
            tasks: self.tasks.len(),
            class_to_task,
            class_order: self.class_order.clone(),
        }
    }
}

/// Shuffles the classes by `seed` and cuts them into consecutive groups of
/// `step_size`. Labels are rewritten so task `t` owns `[t·M, (t+1)·M)`.
pub fn split_tasks(dataset: &Dataset, step_size: usize, seed: u64) -> Result<TaskSequence> {
    let classes = dataset.num_classes;
    if step_size == 0 || classes == 0 || classes % step_size != 0 {
        return Err(Error::Config(format!(
            "{classes} classes cannot be split into tasks of {step_size}"
        )));
    }
    let mut order: Vec<usize> = (0..classes).collect();
    Prng::derive(seed, 0x5A17).shuffle(&mut order);
    let mut relabel = vec![usize::MAX; classes];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    let n_tasks = classes / step_size;
    let mut buckets: Vec<(Vec<Sample>, Vec<Sample>)> = vec![(Vec::new(), Vec::new()); n_tasks];
    for (set, is_train) in [(&dataset.train, true), (&dataset.test, false)] {
        for s in set.samples() {
            if s.label >= classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes,
                });
            }
            let label = relabel[s.label];
            let task = label / step_size;
            let sample = Sample {
                features: s.features.clone(),
                label,
                task,
            };
            if is_train {
                buckets[task].0.push(sample);
            } else {
                buckets[task].1.push(sample);
            }
        }
    }
    let tasks = buckets
        .into_iter()
        .enumerate()
        .map(|(index, (train, test))| Task {
            index,
            source_classes: order[index * step_size..(index + 1) * step_size].to_vec(),
            train: LabeledSet::new(Split::Train, train),
            test: LabeledSet::new(Split::Test, test),
        })
        .collect();
    Ok(TaskSequence {
        seed,
        step_size,
        class_order: order,
        tasks,
    })
}

/// Clusters `data` into `step_size` groups and offsets the cluster index by
/// `known_classes`. With no known classes the raw inputs are clustered,
/// otherwise the model's penultimate features.
pub fn pseudo_label(
    model: &MicroClassifier,
    data: &[Vec<f64>],
    step_size: usize,
    known_classes: usize,
    seed: u64,
    normalize: bool,
) -> Result<Vec<usize>> {
    if step_size == 0 {
        return Err(Error::Config("step size must be >= 1".into()));
    }
    let mut points = if known_classes == 0 {
        data.to_vec()
    } else {
        data.iter()
            .map(|x| model.features(x))
            .collect::<Result<Vec<_>>>()?
    };
    if normalize {
        l2_normalize_rows(&mut points);
    }
    let clusters = kmeans(&points, &KMeansConfig::new(step_size, seed))?;
    Ok(clusters
        .assignments
        .into_iter()
        .map(|c| c + known_classes)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub features: Vec<f64>,
    /// Task the sample was drawn from.
    pub task: usize,
}

/// Fixed-budget replay store keyed by (pseudo) class.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarMemory {
    capacity: usize,
    classes: BTreeMap<usize, Vec<Exemplar>>,
}

/// Per-class quotas for `classes_total` classes, in class order.
pub fn exemplar_quotas(capacity: usize, classes_total: usize) -> Vec<usize> {
    if classes_total == 0 {
        return Vec::new();
    }
    let base = capacity / classes_total;
    let extra = capacity % classes_total;
    (0..classes_total).map(|i| base + usize::from(i < extra)).collect()
}

impl ExemplarMemory {
    pub const DEFAULT_CAPACITY: usize = 2000;

    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            classes: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_sizes(&self) -> BTreeMap<usize, usize> {
        self.classes.iter().map(|(&c, v)| (c, v.len())).collect()
    }

    /// `(features, label)` pairs in class order.
    pub fn entries(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.classes
            .iter()
            .flat_map(|(&c, v)| v.iter().map(move |e| (e.features.as_slice(), c)))
    }

    pub fn exemplars(&self) -> impl Iterator<Item = (usize, &Exemplar)> {
        self.classes
            .iter()
            .flat_map(|(&c, v)| v.iter().map(move |e| (c, e)))
    }

    /// Adds `new` samples (features, pseudo label) of `task` and rebalances
    /// every class to its quota by seeded uniform sub-sampling.
    pub fn update(&mut self, new: &[(Vec<f64>, usize)], task: usize, classes_total: usize, seed: u64) {
        let mut incoming: BTreeMap<usize, Vec<Exemplar>> = BTreeMap::new();
        for (x, label) in new {
            incoming.entry(*label).or_default().push(Exemplar {
                features: x.clone(),
                task,
            });
        }
        for (label, mut items) in incoming {
            self.classes.entry(label).or_default().append(&mut items);
        }
        let total = classes_total.max(self.classes.len());
        let quotas = exemplar_quotas(self.capacity, total);
        let mut rng = Prng::derive(seed, 0xE8E3 ^ task as u64);
        for (i, items) in self.classes.values_mut().enumerate() {
            let quota = quotas[i];
            if items.len() > quota {
                let keep = rng.sample_indices(items.len(), quota);
                let kept = keep.into_iter().map(|j| items[j].clone()).collect();
                *items = kept;
            }
        }
        self.classes.retain(|_, v| !v.is_empty());
    }
}

/// Learns one task from unlabelled data: pseudo-label, expand the head,
/// train on new data plus memory (distilling from the frozen previous
/// model), then refresh the memory. Returns the pseudo labels.
pub fn learn_task(
    model: &mut MicroClassifier,
    data: &[Vec<f64>],
    task: usize,
    memory: &mut ExemplarMemory,
    step_size: usize,
    cfg: &TrainConfig,
    normalize_features: bool,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("task training data"));
    }
    let known = model.num_classes();
    let task_seed = cfg.seed ^ (task as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let labels = pseudo_label(model, data, step_size, known, task_seed, normalize_features)?;

    let old = (known > 0).then(|| model.clone());
    model.expand_head(step_size, task_seed);

    let mut pool: Vec<(&[f64], usize)> = data
        .iter()
        .map(Vec::as_slice)
        .zip(labels.iter().copied())
        .collect();
    pool.extend(memory.entries());

    let mut order: Vec<usize> = (0..pool.len()).collect();
    for epoch in 0..cfg.epochs {
        Prng::derive(task_seed, epoch as u64).shuffle(&mut order);
        let lr = cfg.learning_rate_at(epoch);
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| pool[i]));
            model.train_step(&batch, old.as_ref(), cfg, lr)?;
        }
    }
    if !model.is_finite() {
        return Err(Error::NonFinite("model parameters after training"));
    }

    let labelled: Vec<(Vec<f64>, usize)> = data.iter().cloned().zip(labels.iter().copied()).collect();
    memory.update(&labelled, task, model.num_classes(), task_seed);
    Ok(labels)
}

impl Default for ExemplarMemory {
    fn default() -> Self {
        Self::new(Self::DEFAULT_CAPACITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};

    fn dataset(classes: usize) -> Dataset {
        generate(&SyntheticSpec {
            classes,
            dim: 4,
            train_per_class: 5,
            test_per_class: 2,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn single_task_split() {
        let seq = split_tasks(&dataset(20), 20, 1).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.tasks[0].train.len(), 100);
    }

    #[test]
    fn split_is_a_partition() {
        let d = dataset(20);
        let seq = split_tasks(&d, 5, 3).unwrap();
        assert_eq!(seq.len(), 4);
        let mut all: Vec<usize> = seq.tasks.iter().flat_map(|t| t.source_classes.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        for t in &seq.tasks {
            let lo = t.index * 5;
            for s in t.train.samples().iter().chain(t.test.samples()) {
                assert!((lo..lo + 5).contains(&s.label));
                assert_eq!(s.task, t.index);
            }
            assert_eq!(t.train.len(), 25);
            assert_eq!(t.test.len(), 10);
        }
        assert_eq!(split_tasks(&d, 5, 3).unwrap(), seq);
        assert!(matches!(split_tasks(&d, 6, 3), Err(Error::Config(_))));
    }

    #[test]
    fn split_keeps_features_with_their_class() {
        let d = dataset(10);
        let seq = split_tasks(&d, 5, 9).unwrap();
        for t in &seq.tasks {
            for s in t.train.samples() {
                let source = seq.class_order[s.label];
                assert!(d
                    .train
                    .samples()
                    .iter()
                    .any(|o| o.label == source && o.features == s.features));
            }
        }
        let m = seq.manifest();
        assert_eq!(m.tasks, 2);
        for (i, &c) in seq.class_order.iter().enumerate() {
            assert_eq!(m.class_to_task[&c], i / 5);
        }
    }

    #[test]
    fn pseudo_label_ranges() {
        let model = MicroClassifier::new(2, &[4], 0).unwrap();
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        let labels = pseudo_label(&model, &pts, 1, 0, 1, false).unwrap();
        assert!(labels.iter().all(|&l| l == 0));

        let mut model = MicroClassifier::new(2, &[4], 0).unwrap();
        model.expand_head(10, 0);
        let labels = pseudo_label(&model, &pts, 3, 10, 1, false).unwrap();
        assert!(labels.iter().all(|l| (10..13).contains(l)));
    }

    #[test]
    fn quotas() {
        assert_eq!(exemplar_quotas(2000, 10), vec![200; 10]);
        assert_eq!(exemplar_quotas(7, 3), vec![3, 2, 2]);
    }

    #[test]
    fn memory_respects_capacity_and_quotas() {
        let mut mem = ExemplarMemory::new(7);
        let first: Vec<(Vec<f64>, usize)> = (0..12).map(|i| (vec![i as f64], i % 2)).collect();
        mem.update(&first, 0, 2, 5);
        assert_eq!(mem.class_sizes().values().copied().collect::<Vec<_>>(), vec![4, 3]);
        let second: Vec<(Vec<f64>, usize)> = (0..9).map(|i| (vec![100.0 + i as f64], 2)).collect();
        mem.update(&second, 1, 3, 6);
        assert_eq!(mem.class_sizes().values().copied().collect::<Vec<_>>(), vec![3, 2, 2]);
        assert_eq!(mem.len(), 7);
        assert!(mem.exemplars().all(|(c, e)| (c == 2) == (e.task == 1)));
    }

    #[test]
    fn memory_sampling_is_seeded() {
        let items: Vec<(Vec<f64>, usize)> = (0..50).map(|i| (vec![i as f64], i % 3)).collect();
        let mut a = ExemplarMemory::new(10);
        let mut b = ExemplarMemory::new(10);
        a.update(&items, 0, 3, 42);
        b.update(&items, 0, 3, 42);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epochs_only_expands_head() {
        let d = dataset(4);
        let seq = split_tasks(&d, 2, 0).unwrap();
        let mut model = MicroClassifier::new(4, &[8], 1).unwrap();
        let before = model.clone();
        let mut mem = ExemplarMemory::new(20);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        learn_task(&mut model, &seq.tasks[0].train.features(), 0, &mut mem, 2, &cfg, false).unwrap();
        assert_eq!(model.num_classes(), 2);
        assert_eq!(model.hidden(), before.hidden());
        assert_eq!(mem.len(), 10);
    }
}
