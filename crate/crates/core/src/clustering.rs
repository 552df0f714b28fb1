//! Lloyd's k-means with k-means++ seeding.

use crate::error::{Error, Result};
use crate::ndcore::{squared_distance, Prng};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after every assignment step, first entry from the seeded centroids.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Nearest centroid, ties to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut Prng) -> Vec<Vec<f64>> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.below(points.len())].clone());
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let mut target = rng.next_f64() * total;
        let mut pick = None;
        for (i, &d) in dist.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            pick = Some(i);
            if target < d {
                break;
            }
            target -= d;
        }
        // k <= distinct points guarantees some positive distance remains
        let chosen = points[pick.expect("a point away from all centroids")].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &chosen));
        }
        centroids.push(chosen);
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], out: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (a, p) in out.iter_mut().zip(points) {
        let (idx, d) = nearest(p, centroids);
        *a = idx;
        inertia += d;
    }
    inertia
}

/// Gives every empty cluster the point farthest from the centroid of the
/// currently largest cluster. Returns the recomputed inertia if anything moved.
fn repair_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignments: &mut [usize]) -> Option<f64> {
    let k = centroids.len();
    let mut repaired = false;
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        let largest = (0..k).fold(0, |best, i| if sizes[i] > sizes[best] { i } else { best });
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if assignments[i] != largest {
                continue;
            }
            let d = squared_distance(p, &centroids[largest]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let far = far.expect("largest cluster is non-empty");
        assignments[far] = empty;
        centroids[empty] = points[far].clone();
        repaired = true;
    }
    repaired.then(|| {
        points
            .iter()
            .zip(assignments.iter())
            .map(|(p, &a)| squared_distance(p, &centroids[a]))
            .sum()
    })
}

fn update_centroids(points: &[Vec<f64>], assignments: &[usize], centroids: &mut [Vec<f64>]) -> f64 {
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut max_shift: f64 = 0.0;
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n == 0 {
            continue;
        }
        let new: Vec<f64> = s.into_iter().map(|v| v / n as f64).collect();
        max_shift = max_shift.max(squared_distance(c, &new).sqrt());
        *c = new;
    }
    max_shift
}

pub fn kmeans(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<ClusterResult> {
    if points.is_empty() {
        return Err(Error::Empty("k-means input"));
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::Dimension {
            context: "k-means point",
            expected: dim,
            actual: bad.len(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input"));
    }
    let distinct = distinct_count(points);
    if cfg.k == 0 || cfg.k > distinct {
        return Err(Error::TooFewPoints { k: cfg.k, distinct });
    }

    let mut rng = Prng::derive(cfg.seed, 0xC1u64);
    let mut centroids = plus_plus_init(points, cfg.k, &mut rng);
    let mut assignments = vec![0usize; points.len()];
    let mut inertia = assign(points, &centroids, &mut assignments);
    if let Some(fixed) = repair_empty(points, &mut centroids, &mut assignments) {
        inertia = fixed;
    }
    let mut history = vec![inertia];
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let shift = update_centroids(points, &assignments, &mut centroids);
        inertia = assign(points, &centroids, &mut assignments);
        if let Some(fixed) = repair_empty(points, &mut centroids, &mut assignments) {
            inertia = fixed;
        }
        history.push(inertia);
        if shift < cfg.tol {
            break;
        }
    }
    Ok(ClusterResult {
        assignments,
        centroids,
        inertia,
        inertia_history: history,
        iterations,
    })
}

/// Scales each vector to unit length (zero vectors are left as is).
pub fn l2_normalize_rows(points: &mut [Vec<f64>]) {
    for p in points {
        let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            for v in p.iter_mut() {
                *v /= n;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_pairs_form_exact_clusters() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![10.0, 10.0],
            vec![0.0, 0.0],
            vec![10.0, 10.0],
        ];
        let r = kmeans(&pts, &KMeansConfig::new(2, 3)).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert_eq!(r.assignments[0], r.assignments[2]);
        assert_eq!(r.assignments[1], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[1]);
    }

    #[test]
    fn one_cluster_per_point() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&pts, &KMeansConfig::new(6, 1)).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut seen = r.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 6);
        for (p, &a) in pts.iter().zip(&r.assignments) {
            assert_eq!(&r.centroids[a], p);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            kmeans(&[], &KMeansConfig::new(1, 0)),
            Err(Error::Empty(_))
        ));
        let pts = vec![vec![1.0], vec![1.0], vec![2.0]];
        assert!(matches!(
            kmeans(&pts, &KMeansConfig::new(3, 0)),
            Err(Error::TooFewPoints { k: 3, distinct: 2 })
        ));
        assert!(kmeans(&[vec![1.0], vec![1.0, 2.0]], &KMeansConfig::new(1, 0)).is_err());
    }

    #[test]
    fn same_seed_same_result() {
        let mut rng = Prng::new(8);
        let pts: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.normal(), rng.normal(), rng.normal()]).collect();
        let a = kmeans(&pts, &KMeansConfig::new(4, 21)).unwrap();
        let b = kmeans(&pts, &KMeansConfig::new(4, 21)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn final_assignment_is_nearest_centroid() {
        let mut rng = Prng::new(9);
        for seed in 0..10 {
            let pts: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.normal() * 3.0, rng.normal()]).collect();
            let r = kmeans(&pts, &KMeansConfig::new(3, seed)).unwrap();
            for (p, &a) in pts.iter().zip(&r.assignments) {
                assert_eq!(nearest(p, &r.centroids).0, a);
            }
            for w in r.inertia_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].max(1.0));
            }
        }
    }

    #[test]
    fn empty_cluster_is_repaired() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0], vec![100.0]];
        let mut centroids = vec![vec![1.0], vec![500.0]];
        let mut assignments = vec![0, 0, 0, 0];
        let inertia = repair_empty(&pts, &mut centroids, &mut assignments).unwrap();
        assert_eq!(assignments, vec![0, 0, 0, 1]);
        assert_eq!(centroids[1], vec![100.0]);
        assert_eq!(inertia, 2.0);
    }
}
