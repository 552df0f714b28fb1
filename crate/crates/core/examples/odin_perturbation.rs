//! ODIN nudges the input towards higher tempered max-softmax before scoring.

use oodcl::model::MicroClassifier;
use oodcl::ood::{odin_perturb, score_odin};

fn main() -> oodcl::Result<()> {
    let mut model = MicroClassifier::new(3, &[6], 4)?;
    model.expand_head(4, 5);
    let x = [0.5, -0.25, 1.0];
    let (t, eps) = (1000.0, 0.001);
    let shifted = odin_perturb(&model, &x, t, eps)?;
    println!("input     {x:?}");
    println!("perturbed {shifted:?}");
    println!("gradient of log max-softmax at T={t}: {:?}", model.input_gradient(&x, t)?);
    println!("score without perturbation {:.12}", score_odin(&model, &x, t, 0.0)?);
    println!("score with eps={eps}        {:.12}", score_odin(&model, &x, t, eps)?);
    Ok(())
}
