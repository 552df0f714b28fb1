//! AUROC, AUPR and FPR at 95% TPR for a small hand-made batch.

use oodcl::metrics::{fpr_at_tpr, DetectionMetrics};
use oodcl::ood::ScoredBatch;

fn main() -> oodcl::Result<()> {
    let scores = vec![0.95, 0.9, 0.8, 0.8, 0.6, 0.55, 0.4, 0.3, 0.2, 0.1];
    let is_id = vec![true, true, false, true, true, false, true, false, false, false];
    let batch = ScoredBatch::new(scores, is_id)?;
    let m = DetectionMetrics::compute(&batch)?;
    println!("n_id {} n_ood {}", m.n_id, m.n_ood);
    println!("AUROC {:.4}", m.auroc);
    println!("AUPR  {:.4}", m.aupr);
    println!("FPR@95 {:.4}", m.fpr95);
    println!("FPR@60 {:.4}", fpr_at_tpr(&batch, 0.6)?);
    Ok(())
}
