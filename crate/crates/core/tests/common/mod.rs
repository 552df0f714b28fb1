//! Brute-force oracles shared by the integration and acceptance tests. None of
//! this calls into the code paths it checks.
#![allow(dead_code)]

use oodcl::model::{Dense, MicroClassifier};
use oodcl::ndcore::{Matrix, Prng};

/// (scores, is_id) with a tunable fraction of tied values.
pub fn random_batch(rng: &mut Prng, n: usize, tie_levels: Option<usize>) -> (Vec<f64>, Vec<bool>) {
    loop {
        let mut scores = Vec::with_capacity(n);
        let mut is_id = Vec::with_capacity(n);
        for _ in 0..n {
            let id = rng.next_f64() < 0.6;
            let s = match tie_levels {
                Some(levels) => rng.below(levels) as f64 / levels as f64 + if id { 0.1 } else { 0.0 },
                None => rng.normal() + if id { 0.7 } else { 0.0 },
            };
            scores.push(s);
            is_id.push(id);
        }
        if is_id.iter().any(|&b| b) && is_id.iter().any(|&b| !b) {
            return (scores, is_id);
        }
    }
}

/// Pairwise count over all ID × OOD pairs.
pub fn auroc_pairs(scores: &[f64], is_id: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !is_id[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if is_id[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn distinct_desc(scores: &[f64]) -> Vec<f64> {
    let mut t = scores.to_vec();
    t.sort_by(|a, b| b.partial_cmp(a).unwrap());
    t.dedup();
    t
}

/// (tp, fp) when accepting every score >= t, by full scan.
fn counts_at(scores: &[f64], is_id: &[bool], t: f64) -> (usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    for (&s, &id) in scores.iter().zip(is_id) {
        if s >= t {
            if id {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    (tp, fp)
}

/// Average precision by enumerating every distinct threshold.
pub fn aupr_thresholds(scores: &[f64], is_id: &[bool]) -> f64 {
    let n_id = is_id.iter().filter(|&&b| b).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in distinct_desc(scores) {
        let (tp, fp) = counts_at(scores, is_id, t);
        let recall = tp as f64 / n_id;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Minimum FPR over all distinct thresholds whose TPR reaches `target`.
pub fn fpr_sweep(scores: &[f64], is_id: &[bool], target: f64) -> f64 {
    let n_id = is_id.iter().filter(|&&b| b).count();
    let n_ood = is_id.len() - n_id;
    let mut best = 1.0f64;
    for t in distinct_desc(scores) {
        let (tp, fp) = counts_at(scores, is_id, t);
        if tp as f64 >= target * n_id as f64 - 1e-9 {
            best = best.min(fp as f64 / n_ood as f64);
        }
    }
    best
}

pub fn random_mlp(rng: &mut Prng, input: usize, hidden: &[usize], classes: usize) -> MicroClassifier {
    let mut layers = Vec::new();
    let mut fan_in = input;
    for &h in hidden {
        layers.push(Dense {
            weight: Matrix::from_fn(h, fan_in, |_, _| rng.normal() / (fan_in as f64).sqrt()),
            bias: (0..h).map(|_| 0.1 * rng.normal()).collect(),
        });
        fan_in = h;
    }
    let head = Matrix::from_fn(fan_in, classes, |_, _| rng.normal());
    MicroClassifier::from_parts(input, layers, head).unwrap()
}

/// log of the maximum temperature-scaled softmax entry, evaluated directly.
pub fn log_max_softmax(model: &MicroClassifier, x: &[f64], t: f64) -> f64 {
    let z = model.logits(x).unwrap();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max / t + z.iter().map(|v| ((v - max) / t).exp()).sum::<f64>().ln();
    max / t - lse
}

/// Central differences of `log_max_softmax` with step `h`.
pub fn finite_difference_gradient(model: &MicroClassifier, x: &[f64], t: f64, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (log_max_softmax(model, &xp, t) - log_max_softmax(model, &xm, t)) / (2.0 * h)
        })
        .collect()
}

/// Max over coordinates of |a - b| / max(|a|, |b|, floor).
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Exhaustive best 2-partition inertia for a small point set.
pub fn best_two_partition_inertia(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let cost = |members: &[&Vec<f64>]| -> f64 {
        let mut mean = vec![0.0; dim];
        for p in members {
            for (m, v) in mean.iter_mut().zip(p.iter()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= members.len() as f64;
        }
        members
            .iter()
            .map(|p| p.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum()
    };
    let mut best = f64::INFINITY;
    // point 0 always in group A; both groups non-empty
    for mask in 0u32..(1 << (n - 1)) {
        let mut a = vec![&points[0]];
        let mut b = Vec::new();
        for i in 1..n {
            if mask >> (i - 1) & 1 == 1 {
                b.push(&points[i]);
            } else {
                a.push(&points[i]);
            }
        }
        if b.is_empty() {
            continue;
        }
        best = best.min(cost(&a) + cost(&b));
    }
    best
}

/// Bias correction then confidence enhancement, written straight through.
pub fn chained_ours(logits: &[f64], norms: &[f64], m: usize, eps: f64) -> f64 {
    let corrected: Vec<f64> = (0..logits.len()).map(|i| logits[i] / norms[i]).collect();
    let max = corrected.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = corrected.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let mut top = 0;
    for i in 0..probs.len() {
        if probs[i] > probs[top] {
            top = i;
        }
    }
    let task = top / m;
    let mut h = 0.0;
    for i in task * m..(task + 1) * m {
        if probs[i] > 0.0 {
            h -= probs[i] * probs[i].ln() / (m as f64).ln();
        }
    }
    probs[top] / (h + eps)
}
