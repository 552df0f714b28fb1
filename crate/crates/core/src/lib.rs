//! Post-hoc out-of-distribution detection for unsupervised class-incremental
//! learning.
//!
//! Before each new task is learned, a detector has to tell data of already
//! learned tasks (in-distribution) from data of the incoming task
//! (out-of-distribution) using only the frozen classifier. This crate holds
//! the whole loop at desk scale:
//!
//! - [`ndcore`]: matrices, stable softmax / log-sum-exp, the seeded PRNG
//! - [`model`]: a ReLU MLP with a bias-free expandable head and hand-written gradients
//! - [`clustering`]: k-means++ / Lloyd used for pseudo labels
//! - [`continual`]: task splits, exemplar memory, per-task training with distillation
//! - [`ood`]: MSP, ODIN, energy and the bias-corrected, confidence-enhanced score
//! - [`metrics`]: AUROC, AUPR, FPR at a TPR target
//! - [`protocol`]: the detect-then-learn evaluation loop and its report
//! - [`data`]: synthetic Gaussian mixtures and the CIFAR-100 binary format
//! - [`cli`]: the `oodcl` command line

pub mod cli;
pub mod clustering;
pub mod continual;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ndcore;
pub mod ood;
pub mod protocol;

pub use error::{Error, Result};
