mod common;

use common::{finite_difference_gradient, random_mlp};
use oodcl::model::MicroClassifier;
use oodcl::ndcore::Prng;

/// Draws an input whose hidden pre-activations all stay at least 1e-6 away
/// from the ReLU kink.
fn kink_free_input(model: &MicroClassifier, rng: &mut Prng) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..model.input_dim()).map(|_| rng.normal()).collect();
        if model.pre_activations(&x).unwrap().iter().all(|p| p.abs() >= 1e-6) {
            return x;
        }
    }
}

fn linf_relative_error(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = got.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / scale
}

#[test]
fn input_gradient_matches_central_differences() {
    let mut rng = Prng::new(2024);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let input = 3 + rng.below(6);
        let hidden: Vec<usize> = (0..1 + rng.below(2)).map(|_| 4 + rng.below(8)).collect();
        let classes = 2 + rng.below(6);
        let model = random_mlp(&mut rng, input, &hidden, classes);
        let x = kink_free_input(&model, &mut rng);
        let t = [1.0, 10.0, 1000.0][case % 3];
        let got = model.input_gradient(&x, t).unwrap();
        let want = finite_difference_gradient(&model, &x, t, 1e-5);
        worst = worst.max(linf_relative_error(&got, &want));
    }
    assert!(worst < 1e-6, "worst relative error {worst:e}");
}

#[test]
fn input_gradient_of_constant_model_is_zero() {
    let mut model = MicroClassifier::new(4, &[5], 1).unwrap();
    model.expand_head(3, 2);
    for w in model.head_mut().as_mut_slice() {
        *w = 0.0;
    }
    assert_eq!(model.input_gradient(&[0.5, -0.5, 1.0, 2.0], 1.0).unwrap(), vec![0.0; 4]);
}

#[test]
fn forward_is_pure() {
    let mut rng = Prng::new(5);
    let model = random_mlp(&mut rng, 5, &[6, 4], 3);
    let before = model.clone();
    let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
    let a = model.forward(&x).unwrap();
    let b = model.forward(&x).unwrap();
    assert_eq!(a, b);
    assert_eq!(model, before);
    assert_eq!(a.features.len(), model.feature_dim());
}
