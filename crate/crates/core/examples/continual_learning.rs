//! Learns three unlabeled tasks one after another with exemplar replay and
//! distillation, printing head width and memory composition.

use oodcl::continual::{learn_task, split_tasks, ExemplarMemory};
use oodcl::data::{generate, SyntheticSpec};
use oodcl::model::{MicroClassifier, TrainConfig};

fn main() -> oodcl::Result<()> {
    let data = generate(&SyntheticSpec {
        classes: 12,
        ..SyntheticSpec::default()
    })?;
    let m = 4;
    let seq = split_tasks(&data, m, 1)?;
    println!("class order {:?}", seq.class_order);
    let mut model = MicroClassifier::new(data.input_dim(), &[64, 64], 1)?;
    let mut memory = ExemplarMemory::new(60);
    let cfg = TrainConfig {
        seed: 1,
        ..TrainConfig::default()
    };
    for task in &seq.tasks {
        let labels = learn_task(&mut model, &task.train.features(), task.index, &mut memory, m, &cfg, false)?;
        let mut counts = vec![0; model.num_classes()];
        for l in labels {
            counts[l] += 1;
        }
        println!(
            "task {}: head width {}, pseudo-class sizes {:?}, memory {} ({:?})",
            task.index + 1,
            model.num_classes(),
            &counts[task.index * m..],
            memory.len(),
            memory.class_sizes()
        );
    }
    Ok(())
}
