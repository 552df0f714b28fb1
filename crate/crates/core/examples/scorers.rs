//! Every scorer on the same trained model, for one in-distribution and one
//! novel input.
//!
//! cargo run --example scorers

use oodcl::continual::{learn_task, split_tasks, ExemplarMemory};
use oodcl::data::{generate, SyntheticSpec};
use oodcl::model::{MicroClassifier, TrainConfig};
use oodcl::ood::{confidence_enhance, parse_methods, score};

fn main() -> oodcl::Result<()> {
    let data = generate(&SyntheticSpec {
        classes: 10,
        ..SyntheticSpec::default()
    })?;
    let m = 5;
    let seq = split_tasks(&data, m, 0)?;
    let mut model = MicroClassifier::new(data.input_dim(), &[64, 64], 0)?;
    let mut memory = ExemplarMemory::new(40);
    learn_task(&mut model, &seq.tasks[0].train.features(), 0, &mut memory, m, &TrainConfig::default(), false)?;

    let seen = &seq.tasks[0].test.samples()[0].features;
    let novel = &seq.tasks[1].test.samples()[0].features;
    println!("{:<18} {:>14} {:>14}", "method", "seen", "novel");
    for spec in parse_methods("msp,odin,energy,ours,ours-no-bc,ours-no-ce,ours-no-bc-no-ce")? {
        println!(
            "{:<18} {:>14.6} {:>14.6}",
            spec.name(),
            score(&spec, &model, seen, m)?,
            score(&spec, &model, novel, m)?
        );
    }

    // the enhancement step on its own: a peaked slice beats a flat one
    let peaked = [6.0, 0.0, 0.0, 0.0, 0.0];
    let flat = [1.0, 0.9, 0.8, 0.9, 1.0];
    println!(
        "confidence: peaked {:.3}, flat {:.3}",
        confidence_enhance(&peaked, 5, 1e-5, false)?,
        confidence_enhance(&flat, 5, 1e-5, false)?
    );
    Ok(())
}
