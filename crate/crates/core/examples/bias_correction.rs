//! Dividing each logit by its head column's norm removes the advantage that
//! recently trained classes get from larger weights.

use oodcl::model::MicroClassifier;
use oodcl::ndcore::{argmax, l2_column_norms};
use oodcl::ood::bias_correct;

fn main() -> oodcl::Result<()> {
    let mut model = MicroClassifier::new(4, &[8], 0)?;
    model.expand_head(6, 1);
    // inflate the last task's columns, as training on new data tends to do
    for c in 3..6 {
        model.head_mut().scale_column(c, 5.0);
    }
    let x = [0.3, -1.2, 0.8, 0.1];
    let raw = model.logits(&x)?;
    let corrected = bias_correct(&raw, model.head())?;
    println!("column norms {:?}", l2_column_norms(model.head())?);
    println!("raw logits       {raw:.4?} -> argmax {}", argmax(&raw));
    println!("corrected logits {corrected:.4?} -> argmax {}", argmax(&corrected));

    model.head_mut().scale_column(0, 100.0);
    let again = bias_correct(&model.logits(&x)?, model.head())?;
    println!("after scaling column 0 by 100: {again:.4?}");
    Ok(())
}
