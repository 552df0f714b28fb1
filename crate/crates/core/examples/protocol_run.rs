//! Full detect-then-learn protocol on the default synthetic mixture
//! (20 classes, 5 per task, 5 seeds) with all six scorers.
//!
//! cargo run --release --example protocol_run -- [seeds]

use oodcl::protocol::{run, ProtocolConfig};

fn main() -> oodcl::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let cfg = ProtocolConfig {
        seeds: (0..seeds).collect(),
        ..ProtocolConfig::default()
    };
    let start = std::time::Instant::now();
    let report = run(&cfg)?;
    println!("{}", report.summary_table());
    println!("per step (seed-averaged AUROC):");
    for step in 2..=4 {
        let mut line = format!("  {:>2}/{:<2}", (step - 1) * cfg.step_size, cfg.step_size);
        for s in &report.summary {
            let rows: Vec<f64> = report
                .steps
                .iter()
                .filter(|r| r.scorer == s.scorer && r.step == step)
                .map(|r| r.auroc)
                .collect();
            line.push_str(&format!("  {}={:.4}", s.scorer, rows.iter().sum::<f64>() / rows.len() as f64));
        }
        println!("{line}");
    }
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
