use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("k-means needs k <= distinct points (k = {k}, distinct = {distinct})")]
    TooFewPoints { k: usize, distinct: usize },

    #[error("classifier weight column for class {class} has zero norm")]
    ZeroNorm { class: usize },

    #[error("step size must be at least 2 for confidence enhancement (got {0})")]
    StepSizeTooSmall(usize),

    #[error("method `{0}` is not available for logits dumps (needs input gradients)")]
    UnsupportedInDumpMode(String),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("metrics need at least one in-distribution and one out-of-distribution sample (id = {n_id}, ood = {n_ood})")]
    SingleClass { n_id: usize, n_ood: usize },

    #[error("dataset provides {available} classes, {required} required")]
    ClassShortfall { required: usize, available: usize },

    #[error("access violation at step {step}: {request}")]
    AccessViolation { step: usize, request: String },

    #[error("malformed CIFAR-100 file {path}: {reason} at byte offset {offset}")]
    Cifar {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("parse error in {source_name}: {message}")]
    Parse {
        source_name: String,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            message: message.into(),
        }
    }
}
