//! K-means pseudo labels for an unlabeled task, offset past the classes the
//! model already knows.

use oodcl::clustering::{kmeans, KMeansConfig};
use oodcl::continual::pseudo_label;
use oodcl::data::{generate, SyntheticSpec};
use oodcl::model::MicroClassifier;

fn main() -> oodcl::Result<()> {
    let data = generate(&SyntheticSpec {
        classes: 3,
        dim: 4,
        train_per_class: 30,
        ..SyntheticSpec::default()
    })?;
    let xs = data.train.features();
    let r = kmeans(&xs, &KMeansConfig::new(3, 0))?;
    println!("inertia per iteration: {:.3?}", r.inertia_history);

    let mut contingency = [[0usize; 3]; 3];
    for (s, &a) in data.train.samples().iter().zip(&r.assignments) {
        contingency[s.label][a] += 1;
    }
    println!("true class x cluster:");
    for row in contingency {
        println!("  {row:?}");
    }

    let model = MicroClassifier::new(4, &[16], 0)?;
    let labels = pseudo_label(&model, &xs, 3, 0, 0, false)?;
    println!("pseudo labels of the first 10 points (no known classes, raw inputs): {:?}", &labels[..10]);
    Ok(())
}
