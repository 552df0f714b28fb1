//! Threshold-free detection metrics with in-distribution as the positive class.
//!
//! Equal scores are always handled as one group, so results do not depend on
//! sample order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ood::ScoredBatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub auroc: f64,
    pub aupr: f64,
    pub fpr95: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

/// Per distinct score (descending): counts of ID and OOD samples.
struct Groups {
    groups: Vec<(usize, usize)>,
    n_id: usize,
    n_ood: usize,
}

fn grouped(batch: &ScoredBatch) -> Result<Groups> {
    if batch.scores.len() != batch.is_id.len() {
        return Err(Error::Dimension {
            context: "scored batch",
            expected: batch.scores.len(),
            actual: batch.is_id.len(),
        });
    }
    if batch.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let n_id = batch.n_id();
    let n_ood = batch.n_ood();
    if n_id == 0 || n_ood == 0 {
        return Err(Error::SingleClass { n_id, n_ood });
    }
    let mut order: Vec<(f64, bool)> = batch
        .scores
        .iter()
        .copied()
        .zip(batch.is_id.iter().copied())
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last = f64::NAN;
    for (s, id) in order {
        // -0.0 and 0.0 are the same threshold
        if groups.is_empty() || s != last {
            groups.push((0, 0));
            last = s;
        }
        let g = groups.last_mut().unwrap();
        if id {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    Ok(Groups { groups, n_id, n_ood })
}

/// `P(s_id > s_ood) + ½·P(s_id = s_ood)`.
pub fn auroc(batch: &ScoredBatch) -> Result<f64> {
    let g = grouped(batch)?;
    Ok(auroc_from(&g))
}

fn auroc_from(g: &Groups) -> f64 {
    // walk from the highest score down; `ood_above` counts OOD strictly higher
    let mut ood_above = 0usize;
    let mut wins = 0.0;
    for &(id, ood) in &g.groups {
        let below = g.n_ood - ood_above - ood;
        wins += id as f64 * (below as f64 + 0.5 * ood as f64);
        ood_above += ood;
    }
    wins / (g.n_id as f64 * g.n_ood as f64)
}

/// Average precision: `Σ ΔRecall · Precision` over descending thresholds.
pub fn aupr(batch: &ScoredBatch) -> Result<f64> {
    let g = grouped(batch)?;
    Ok(aupr_from(&g))
}

fn aupr_from(g: &Groups) -> f64 {
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for &(id, ood) in &g.groups {
        tp += id;
        fp += ood;
        if id > 0 {
            ap += (id as f64 / g.n_id as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    ap
}

fn reaches(tp: usize, n_id: usize, target: f64) -> bool {
    tp as f64 >= target * n_id as f64 - 1e-9
}

/// Smallest FPR among thresholds whose TPR is at least `tpr_target`.
pub fn fpr_at_tpr(batch: &ScoredBatch, tpr_target: f64) -> Result<f64> {
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::Config(format!("TPR target {tpr_target} not in (0, 1]")));
    }
    let g = grouped(batch)?;
    Ok(fpr_from(&g, tpr_target))
}

fn fpr_from(g: &Groups, tpr_target: f64) -> f64 {
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(id, ood) in &g.groups {
        tp += id;
        fp += ood;
        if reaches(tp, g.n_id, tpr_target) {
            return fp as f64 / g.n_ood as f64;
        }
    }
    1.0
}

impl DetectionMetrics {
    pub fn compute(batch: &ScoredBatch) -> Result<Self> {
        let g = grouped(batch)?;
        Ok(Self {
            auroc: auroc_from(&g),
            aupr: aupr_from(&g),
            fpr95: fpr_from(&g, 0.95),
            n_id: g.n_id,
            n_ood: g.n_ood,
        })
    }
}

/// A scores file row: `id,is_id,score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    #[serde(deserialize_with = "de_flag", serialize_with = "ser_flag")]
    pub is_id: bool,
    pub score: f64,
}

fn de_flag<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "id" => Ok(true),
        "0" | "false" | "ood" => Ok(false),
        other => Err(serde::de::Error::custom(format!("bad is_id flag `{other}`"))),
    }
}

fn ser_flag<S: serde::Serializer>(v: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*v))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::parse(&name, format!("row {}: {e}", i + 1))))
        .collect()
}

pub fn write_scores(rows: &[ScoreRow], w: impl Write) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::parse("<scores>", e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io("<scores>", e))
}

pub fn batch_from_rows(rows: &[ScoreRow]) -> Result<ScoredBatch> {
    ScoredBatch::new(
        rows.iter().map(|r| r.score).collect(),
        rows.iter().map(|r| r.is_id).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(id: &[f64], ood: &[f64]) -> ScoredBatch {
        let mut b = ScoredBatch::default();
        for &s in id {
            b.push(s, true);
        }
        for &s in ood {
            b.push(s, false);
        }
        b
    }

    #[test]
    fn perfect_separation() {
        let b = batch(&[3.0, 4.0, 5.0], &[0.0, 1.0]);
        let m = DetectionMetrics::compute(&b).unwrap();
        assert_eq!((m.auroc, m.aupr, m.fpr95), (1.0, 1.0, 0.0));
    }

    #[test]
    fn total_ties() {
        let b = batch(&[1.0; 3], &[1.0; 7]);
        let m = DetectionMetrics::compute(&b).unwrap();
        assert_eq!(m.auroc, 0.5);
        assert!((m.aupr - 0.3).abs() < 1e-15);
        assert_eq!(m.fpr95, 1.0);
    }

    #[test]
    fn reversed_ranking() {
        let b = batch(&[0.0, 1.0], &[2.0, 3.0]);
        assert_eq!(auroc(&b).unwrap(), 0.0);
        assert_eq!(fpr_at_tpr(&b, 0.95).unwrap(), 1.0);
    }

    #[test]
    fn hand_computed_mixture() {
        // descending: 0.9 id, 0.8 ood, 0.7 id, 0.6 id, 0.5 ood
        let b = batch(&[0.9, 0.7, 0.6], &[0.8, 0.5]);
        assert!((auroc(&b).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        let want = (1.0 / 3.0) * 1.0 + (1.0 / 3.0) * (2.0 / 3.0) + (1.0 / 3.0) * (3.0 / 4.0);
        assert!((aupr(&b).unwrap() - want).abs() < 1e-15);
        assert_eq!(fpr_at_tpr(&b, 0.95).unwrap(), 0.5);
        assert_eq!(fpr_at_tpr(&b, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn single_class_is_an_error() {
        let b = batch(&[1.0, 2.0], &[]);
        assert!(matches!(auroc(&b), Err(Error::SingleClass { n_id: 2, n_ood: 0 })));
        assert!(aupr(&b).is_err());
        assert!(fpr_at_tpr(&b, 0.95).is_err());
        assert!(fpr_at_tpr(&batch(&[1.0], &[0.0]), 0.0).is_err());
    }

    #[test]
    fn scores_csv_round_trip() {
        let rows = vec![
            ScoreRow { id: "s0".into(), is_id: true, score: 0.25 },
            ScoreRow { id: "s1".into(), is_id: false, score: -3.5e-7 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        write_scores(&rows, std::fs::File::create(&path).unwrap()).unwrap();
        assert_eq!(read_scores(&path).unwrap(), rows);
        std::fs::write(&path, "id,is_id,score\na,true,1\nb,ood,0.5\n").unwrap();
        let back = read_scores(&path).unwrap();
        assert!(back[0].is_id && !back[1].is_id);
    }
}
