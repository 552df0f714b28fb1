//! A small ReLU multilayer perceptron with a bias-free, expandable linear head.
//!
//! Gradients are derived by hand. The head `P` is stored as a `d × C` matrix
//! (one column per class) so per-class weight norms can be read off directly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{argmax, logsumexp_unchecked, softmax_unchecked, Matrix, Prng};

/// Fully connected layer `relu(W·x + b)`; `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroClassifier {
    input_dim: usize,
    hidden: Vec<Dense>,
    head: Matrix,
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: Vec<f64>,
    /// Penultimate activation, length `d`.
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative factor applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub kd_temperature: f64,
    pub kd_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.1,
            lr_decay: 0.1,
            lr_decay_every: 10,
            kd_temperature: 2.0,
            kd_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and >= 0".into()));
        }
        if !(self.lr_decay > 0.0) || self.lr_decay_every == 0 {
            return Err(Error::Config("learning rate decay must be > 0 with interval >= 1".into()));
        }
        if !(self.kd_temperature > 0.0) || !(self.kd_weight >= 0.0) {
            return Err(Error::Config("kd temperature must be > 0 and kd weight >= 0".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// Activations kept for backpropagation.
struct Trace {
    /// `acts[0]` is the input, `acts[i + 1]` the output of hidden layer `i`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

/// Parameter gradients, same layout as the model.
struct Gradients {
    hidden: Vec<(Matrix, Vec<f64>)>,
    head: Matrix,
}

impl Gradients {
    fn zeros_like(model: &MicroClassifier) -> Self {
        Self {
            hidden: model
                .hidden
                .iter()
                .map(|l| {
                    (
                        Matrix::zeros(l.out_dim(), l.in_dim()),
                        vec![0.0; l.out_dim()],
                    )
                })
                .collect(),
            head: Matrix::zeros(model.head.rows(), model.head.cols()),
        }
    }
}

fn relu_grad(pre: f64) -> f64 {
    // subgradient at 0 is 0
    if pre > 0.0 {
        1.0
    } else {
        0.0
    }
}

impl MicroClassifier {
    /// He-initialised hidden layers and an empty head (no classes yet).
    pub fn new(input_dim: usize, hidden_sizes: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        let mut rng = Prng::derive(seed, 0x1417);
        let mut hidden = Vec::with_capacity(hidden_sizes.len());
        let mut fan_in = input_dim;
        for &width in hidden_sizes {
            let std = (2.0 / fan_in as f64).sqrt();
            hidden.push(Dense {
                weight: Matrix::from_fn(width, fan_in, |_, _| rng.normal() * std),
                bias: vec![0.0; width],
            });
            fan_in = width;
        }
        Ok(Self {
            input_dim,
            hidden,
            head: Matrix::zeros(fan_in, 0),
        })
    }

    /// Assembles a model from explicit parameters.
    pub fn from_parts(input_dim: usize, hidden: Vec<Dense>, head: Matrix) -> Result<Self> {
        let mut fan_in = input_dim;
        for layer in &hidden {
            if layer.in_dim() != fan_in {
                return Err(Error::Dimension {
                    context: "hidden layer input",
                    expected: fan_in,
                    actual: layer.in_dim(),
                });
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Dimension {
                    context: "hidden layer bias",
                    expected: layer.out_dim(),
                    actual: layer.bias.len(),
                });
            }
            if !layer.weight.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite("hidden layer parameters"));
            }
            fan_in = layer.out_dim();
        }
        if head.rows() != fan_in {
            return Err(Error::Dimension {
                context: "head rows",
                expected: fan_in,
                actual: head.rows(),
            });
        }
        if !head.is_finite() {
            return Err(Error::NonFinite("head"));
        }
        Ok(Self {
            input_dim,
            hidden,
            head,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Feature dimension `d`.
    pub fn feature_dim(&self) -> usize {
        self.head.rows()
    }

    /// Classes seen so far, `C`.
    pub fn num_classes(&self) -> usize {
        self.head.cols()
    }

    pub fn hidden(&self) -> &[Dense] {
        &self.hidden
    }

    /// The classifier weights `P` (`d × C`).
    pub fn head(&self) -> &Matrix {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Matrix {
        &mut self.head
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                context: "model input",
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.hidden.len() + 1);
        let mut pre = Vec::with_capacity(self.hidden.len());
        acts.push(x.to_vec());
        for layer in &self.hidden {
            let mut z = layer.weight.matvec(acts.last().unwrap());
            for (zi, b) in z.iter_mut().zip(&layer.bias) {
                *zi += b;
            }
            let a = z.iter().map(|&v| v.max(0.0)).collect();
            pre.push(z);
            acts.push(a);
        }
        let logits = self.head.matvec_t(acts.last().unwrap());
        Trace { acts, pre, logits }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        let mut t = self.trace(x);
        Ok(Forward {
            features: t.acts.pop().unwrap(),
            logits: t.logits,
        })
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(x).logits)
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.features)
    }

    /// Pre-activations of every hidden unit, used to detect ReLU kinks.
    pub fn pre_activations(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(x).pre.concat())
    }

    /// Backpropagates `d_logits`; accumulates parameter gradients into `grads`
    /// when given and returns the gradient with respect to the input.
    fn backward(&self, t: &Trace, d_logits: &[f64], mut grads: Option<&mut Gradients>) -> Vec<f64> {
        let features = t.acts.last().unwrap();
        if let Some(g) = grads.as_deref_mut() {
            for (j, &f) in features.iter().enumerate() {
                if f == 0.0 {
                    continue;
                }
                for (gp, &dl) in g.head.row_mut(j).iter_mut().zip(d_logits) {
                    *gp += f * dl;
                }
            }
        }
        let mut d_act = self.head.matvec(d_logits);
        for (i, layer) in self.hidden.iter().enumerate().rev() {
            let d_pre: Vec<f64> = d_act
                .iter()
                .zip(&t.pre[i])
                .map(|(&d, &z)| d * relu_grad(z))
                .collect();
            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = &mut g.hidden[i];
                let input = &t.acts[i];
                for (r, &dp) in d_pre.iter().enumerate() {
                    if dp == 0.0 {
                        continue;
                    }
                    gb[r] += dp;
                    for (w, &a) in gw.row_mut(r).iter_mut().zip(input) {
                        *w += dp * a;
                    }
                }
            }
            d_act = layer.weight.matvec_t(&d_pre);
        }
        d_act
    }

    /// `∇ₓ log max softmax(logits(x) / T)`.
    pub fn input_gradient(&self, x: &[f64], temperature: f64) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if !(temperature > 0.0) {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        if self.num_classes() == 0 {
            return Err(Error::Empty("classifier head"));
        }
        let t = self.trace(x);
        let scaled: Vec<f64> = t.logits.iter().map(|z| z / temperature).collect();
        let s = softmax_unchecked(&scaled);
        let top = argmax(&s);
        // d/dz_j [z_top/T - lse(z/T)] = (δ_j,top - s_j) / T
        let d_logits: Vec<f64> = s
            .iter()
            .enumerate()
            .map(|(j, &sj)| ((j == top) as u8 as f64 - sj) / temperature)
            .collect();
        Ok(self.backward(&t, &d_logits, None))
    }

    /// `-log softmax(logits(x))[label]`.
    pub fn cross_entropy(&self, x: &[f64], label: usize) -> Result<f64> {
        let z = self.logits(x)?;
        if label >= z.len() {
            return Err(Error::LabelOutOfRange {
                label,
                classes: z.len(),
            });
        }
        Ok(logsumexp_unchecked(&z) - z[label])
    }

    /// Temperature-scaled distillation term `T² · KL(q_old ‖ p_new)` over the
    /// classes `old` knows about.
    pub fn distillation_loss(&self, old: &MicroClassifier, x: &[f64], temperature: f64) -> Result<f64> {
        self.check_old(old)?;
        let z_new = self.logits(x)?;
        let z_old = old.logits(x)?;
        let (loss, _) = distillation_term(&z_old, &z_new[..z_old.len()], temperature);
        Ok(loss)
    }

    fn check_old(&self, old: &MicroClassifier) -> Result<()> {
        if old.input_dim != self.input_dim {
            return Err(Error::Dimension {
                context: "old model input",
                expected: self.input_dim,
                actual: old.input_dim,
            });
        }
        if old.num_classes() >= self.num_classes() {
            return Err(Error::Config(format!(
                "old model must know fewer classes than the current one ({} >= {})",
                old.num_classes(),
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// One SGD step on mean cross-entropy plus `kd_weight` times the
    /// distillation term against `old` (when given). Returns the mean loss
    /// before the update.
    pub fn train_step(
        &mut self,
        batch: &[(&[f64], usize)],
        old: Option<&MicroClassifier>,
        cfg: &TrainConfig,
        learning_rate: f64,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        if let Some(old) = old {
            self.check_old(old)?;
        }
        let classes = self.num_classes();
        let mut grads = Gradients::zeros_like(self);
        let mut total = 0.0;
        for &(x, label) in batch {
            self.check_input(x)?;
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
            let t = self.trace(x);
            let p = softmax_unchecked(&t.logits);
            total += logsumexp_unchecked(&t.logits) - t.logits[label];
            let mut d_logits = p;
            d_logits[label] -= 1.0;
            if let Some(old) = old.filter(|_| cfg.kd_weight > 0.0) {
                let z_old = old.trace(x).logits;
                let (kd, d_kd) = distillation_term(&z_old, &t.logits[..z_old.len()], cfg.kd_temperature);
                total += cfg.kd_weight * kd;
                for (d, g) in d_logits.iter_mut().zip(d_kd) {
                    *d += cfg.kd_weight * g;
                }
            }
            self.backward(&t, &d_logits, Some(&mut grads));
        }
        let n = batch.len() as f64;
        let step = learning_rate / n;
        if step != 0.0 {
            for (layer, (gw, gb)) in self.hidden.iter_mut().zip(&grads.hidden) {
                for (w, g) in layer.weight.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                    *w -= step * g;
                }
                for (b, g) in layer.bias.iter_mut().zip(gb) {
                    *b -= step * g;
                }
            }
            for (w, g) in self.head.as_mut_slice().iter_mut().zip(grads.head.as_slice()) {
                *w -= step * g;
            }
        }
        Ok(total / n)
    }

    /// Appends `new_classes` head columns drawn from `N(0, 0.01²)`.
    pub fn expand_head(&mut self, new_classes: usize, seed: u64) {
        let mut rng = Prng::derive(seed, 0xE7A4);
        self.head.append_columns(new_classes, |_, _| rng.normal() * 0.01);
    }

    pub fn is_finite(&self) -> bool {
        self.head.is_finite()
            && self
                .hidden
                .iter()
                .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        let text = serde_json::to_string(&ckpt)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::parse(
                path.display().to_string(),
                format!("unsupported checkpoint {} v{}", ckpt.format, ckpt.version),
            ));
        }
        let m = ckpt.model;
        Self::from_parts(m.input_dim, m.hidden, m.head)
    }
}

const CHECKPOINT_FORMAT: &str = "oodcl-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: MicroClassifier,
}

/// Returns `T²·KL(softmax(z_old/T) ‖ softmax(z_new/T))` and its gradient
/// with respect to `z_new`.
fn distillation_term(z_old: &[f64], z_new: &[f64], temperature: f64) -> (f64, Vec<f64>) {
    let old_scaled: Vec<f64> = z_old.iter().map(|z| z / temperature).collect();
    let new_scaled: Vec<f64> = z_new.iter().map(|z| z / temperature).collect();
    let lse_old = logsumexp_unchecked(&old_scaled);
    let lse_new = logsumexp_unchecked(&new_scaled);
    let mut kl = 0.0;
    let mut grad = Vec::with_capacity(z_new.len());
    for (a, b) in old_scaled.iter().zip(&new_scaled) {
        let log_q = a - lse_old;
        let log_p = b - lse_new;
        let q = log_q.exp();
        if q > 0.0 {
            kl += q * (log_q - log_p);
        }
        grad.push(temperature * (log_p.exp() - q));
    }
    (temperature * temperature * kl, grad)
}
