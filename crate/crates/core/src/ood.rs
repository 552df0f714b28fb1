//! Post-hoc confidence scorers. Every scorer is oriented so that a larger
//! score means "more in-distribution".
//!
//! The two-stage detector first divides each class logit by the L2 norm of
//! that class's head column (bias correction), then divides the maximum
//! softmax probability by the normalised entropy of the softmax mass inside
//! the task that owns the winning class (confidence enhancement).

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MicroClassifier;
use crate::ndcore::{argmax, l2_column_norms, logsumexp_unchecked, softmax_unchecked, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Msp,
    Odin,
    Energy,
    Ours,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    pub use_bias_correction: bool,
    pub use_confidence_enhancement: bool,
    pub odin_temperature: f64,
    pub odin_epsilon: f64,
    pub energy_temperature: f64,
    pub ce_epsilon: f64,
    pub ce_renormalize_task: bool,
}

impl ScorerSpec {
    pub fn new(kind: ScorerKind) -> Self {
        Self {
            kind,
            use_bias_correction: kind == ScorerKind::Ours,
            use_confidence_enhancement: kind == ScorerKind::Ours,
            odin_temperature: 1000.0,
            odin_epsilon: 0.001,
            energy_temperature: 1000.0,
            ce_epsilon: 1e-5,
            ce_renormalize_task: false,
        }
    }

    pub fn msp() -> Self {
        Self::new(ScorerKind::Msp)
    }

    pub fn odin() -> Self {
        Self::new(ScorerKind::Odin)
    }

    pub fn energy() -> Self {
        Self::new(ScorerKind::Energy)
    }

    /// Bias correction followed by confidence enhancement.
    pub fn ours() -> Self {
        Self::new(ScorerKind::Ours)
    }

    pub fn ours_with(bias_correction: bool, confidence_enhancement: bool) -> Self {
        Self {
            use_bias_correction: bias_correction,
            use_confidence_enhancement: confidence_enhancement,
            ..Self::ours()
        }
    }

    /// Standard method names: `msp`, `odin`, `energy`, `ours`, `ours-no-bc`,
    /// `ours-no-ce`, plus `ours-no-bc-no-ce`.
    pub fn name(&self) -> String {
        match self.kind {
            ScorerKind::Msp => "msp".into(),
            ScorerKind::Odin => "odin".into(),
            ScorerKind::Energy => "energy".into(),
            ScorerKind::Ours => match (self.use_bias_correction, self.use_confidence_enhancement) {
                (true, true) => "ours".into(),
                (false, true) => "ours-no-bc".into(),
                (true, false) => "ours-no-ce".into(),
                (false, false) => "ours-no-bc-no-ce".into(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.odin_temperature) || !positive(self.energy_temperature) {
            return Err(Error::Config("temperatures must be > 0".into()));
        }
        if !(self.odin_epsilon >= 0.0 && self.odin_epsilon.is_finite()) || !positive(self.ce_epsilon) {
            return Err(Error::Config(
                "ODIN epsilon must be >= 0 and confidence-enhancement epsilon > 0".into(),
            ));
        }
        Ok(())
    }

    /// Whether the scorer can run on logits alone.
    pub fn works_on_logits(&self) -> bool {
        self.kind != ScorerKind::Odin
    }
}

impl FromStr for ScorerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "msp" => Self::msp(),
            "odin" => Self::odin(),
            "energy" => Self::energy(),
            "ours" => Self::ours(),
            "ours-no-bc" => Self::ours_with(false, true),
            "ours-no-ce" => Self::ours_with(true, false),
            "ours-no-bc-no-ce" => Self::ours_with(false, false),
            other => return Err(Error::UnknownMethod(other.to_string())),
        })
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Parses a comma separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<ScorerSpec>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Confidence scores with ID (positive) / OOD ground truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredBatch {
    pub scores: Vec<f64>,
    pub is_id: Vec<bool>,
}

impl ScoredBatch {
    pub fn new(scores: Vec<f64>, is_id: Vec<bool>) -> Result<Self> {
        if scores.len() != is_id.len() {
            return Err(Error::Dimension {
                context: "scored batch",
                expected: scores.len(),
                actual: is_id.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("scores"));
        }
        Ok(Self { scores, is_id })
    }

    pub fn push(&mut self, score: f64, is_id: bool) {
        self.scores.push(score);
        self.is_id.push(is_id);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_id(&self) -> usize {
        self.is_id.iter().filter(|&&b| b).count()
    }

    pub fn n_ood(&self) -> usize {
        self.len() - self.n_id()
    }

    /// Mean ID score minus mean OOD score.
    pub fn confidence_gap(&self) -> f64 {
        let (mut sid, mut sood) = (0.0, 0.0);
        for (&s, &id) in self.scores.iter().zip(&self.is_id) {
            if id {
                sid += s;
            } else {
                sood += s;
            }
        }
        sid / self.n_id() as f64 - sood / self.n_ood() as f64
    }
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    Ok(())
}

/// Maximum softmax probability of `logits`.
pub fn max_softmax(logits: &[f64]) -> f64 {
    softmax_unchecked(logits).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

fn max_softmax_scaled(logits: &[f64], temperature: f64) -> f64 {
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    max_softmax(&scaled)
}

/// `T · logsumexp(logits / T)`, the negated free energy.
pub fn energy_from_logits(logits: &[f64], temperature: f64) -> f64 {
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    temperature * logsumexp_unchecked(&scaled)
}

pub fn score_msp(model: &MicroClassifier, x: &[f64]) -> Result<f64> {
    let logits = model.logits(x)?;
    check_logits(&logits)?;
    Ok(max_softmax(&logits))
}

pub fn score_energy(model: &MicroClassifier, x: &[f64], temperature: f64) -> Result<f64> {
    let logits = model.logits(x)?;
    check_logits(&logits)?;
    Ok(energy_from_logits(&logits, temperature))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Input `x` moved by `epsilon` along the sign of the gradient of the
/// log temperature-scaled maximum softmax probability.
pub fn odin_perturb(model: &MicroClassifier, x: &[f64], temperature: f64, epsilon: f64) -> Result<Vec<f64>> {
    let grad = model.input_gradient(x, temperature)?;
    // x - ε·sign(-∇)
    Ok(x.iter()
        .zip(&grad)
        .map(|(&xi, &g)| xi - epsilon * sign(-g))
        .collect())
}

pub fn score_odin(model: &MicroClassifier, x: &[f64], temperature: f64, epsilon: f64) -> Result<f64> {
    let perturbed = if epsilon == 0.0 {
        x.to_vec()
    } else {
        odin_perturb(model, x, temperature, epsilon)?
    };
    let logits = model.logits(&perturbed)?;
    check_logits(&logits)?;
    Ok(max_softmax_scaled(&logits, temperature))
}

/// Divides every logit by the L2 norm of its class column in `head`.
pub fn bias_correct(logits: &[f64], head: &Matrix) -> Result<Vec<f64>> {
    let norms = l2_column_norms(head)?;
    bias_correct_with_norms(logits, &norms)
}

pub fn bias_correct_with_norms(logits: &[f64], norms: &[f64]) -> Result<Vec<f64>> {
    if logits.len() != norms.len() {
        return Err(Error::Dimension {
            context: "bias correction",
            expected: norms.len(),
            actual: logits.len(),
        });
    }
    if let Some(class) = norms.iter().position(|&n| !(n >= 1e-12)) {
        return Err(Error::ZeroNorm { class });
    }
    Ok(logits.iter().zip(norms).map(|(o, w)| o / w).collect())
}

/// Maximum softmax probability over the entropy (base `step_size`) of the
/// softmax entries belonging to the task of the winning class.
pub fn confidence_enhance(
    corrected: &[f64],
    step_size: usize,
    epsilon: f64,
    renormalize_task: bool,
) -> Result<f64> {
    if step_size < 2 {
        return Err(Error::StepSizeTooSmall(step_size));
    }
    check_logits(corrected)?;
    if corrected.len() % step_size != 0 {
        return Err(Error::Dimension {
            context: "confidence enhancement (classes must be tasks × step size)",
            expected: (corrected.len() / step_size + 1) * step_size,
            actual: corrected.len(),
        });
    }
    let probs = softmax_unchecked(corrected);
    let top = argmax(&probs);
    let s_max = probs[top];
    let task = top / step_size;
    let slice = &probs[task * step_size..(task + 1) * step_size];
    let mass: f64 = if renormalize_task { slice.iter().sum() } else { 1.0 };
    let ln_m = (step_size as f64).ln();
    let entropy = -slice
        .iter()
        .map(|&p| {
            let v = p / mass;
            if v > 0.0 {
                v * v.ln()
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / ln_m;
    Ok(s_max / (entropy + epsilon))
}

/// Scores from logits alone (the dump path). `column_norms` is needed for
/// bias correction; ODIN is rejected.
pub fn score_logits(spec: &ScorerSpec, logits: &[f64], column_norms: Option<&[f64]>, step_size: usize) -> Result<f64> {
    check_logits(logits)?;
    match spec.kind {
        ScorerKind::Msp => Ok(max_softmax(logits)),
        ScorerKind::Energy => Ok(energy_from_logits(logits, spec.energy_temperature)),
        ScorerKind::Odin => Err(Error::UnsupportedInDumpMode(spec.name())),
        ScorerKind::Ours => {
            let corrected;
            let out = if spec.use_bias_correction {
                let norms = column_norms
                    .ok_or_else(|| Error::Config("bias correction needs classifier column norms".into()))?;
                corrected = bias_correct_with_norms(logits, norms)?;
                corrected.as_slice()
            } else {
                logits
            };
            if spec.use_confidence_enhancement {
                confidence_enhance(out, step_size, spec.ce_epsilon, spec.ce_renormalize_task)
            } else {
                Ok(max_softmax(out))
            }
        }
    }
}

/// Scores one input against `model`; `step_size` is the number of classes
/// per learned task.
pub fn score(spec: &ScorerSpec, model: &MicroClassifier, x: &[f64], step_size: usize) -> Result<f64> {
    match spec.kind {
        ScorerKind::Odin => score_odin(model, x, spec.odin_temperature, spec.odin_epsilon),
        ScorerKind::Ours if spec.use_bias_correction => {
            let norms = l2_column_norms(model.head())?;
            score_logits(spec, &model.logits(x)?, Some(&norms), step_size)
        }
        _ => score_logits(spec, &model.logits(x)?, None, step_size),
    }
}

/// Scores a batch of inputs, reusing the head norms.
pub fn score_many(spec: &ScorerSpec, model: &MicroClassifier, xs: &[&[f64]], step_size: usize) -> Result<Vec<f64>> {
    let norms = match spec.kind {
        ScorerKind::Ours if spec.use_bias_correction => Some(l2_column_norms(model.head())?),
        _ => None,
    };
    xs.iter()
        .map(|x| match spec.kind {
            ScorerKind::Odin => score_odin(model, x, spec.odin_temperature, spec.odin_epsilon),
            _ => score_logits(spec, &model.logits(x)?, norms.as_deref(), step_size),
        })
        .collect()
}

pub const LOGITS_DUMP_FORMAT: &str = "oodcl-logits";
pub const LOGITS_DUMP_VERSION: u32 = 1;

/// First line of a logits dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub format: String,
    pub version: u32,
    /// Total classes `C`.
    pub classes: usize,
    /// Classes per task `M`.
    pub step_size: usize,
    /// Tasks learned `K`.
    pub tasks: usize,
    pub column_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpRow {
    pub id: String,
    pub is_id: bool,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitsDump {
    pub header: DumpHeader,
    pub rows: Vec<DumpRow>,
}

impl LogitsDump {
    pub fn new(step_size: usize, column_norms: Vec<f64>, rows: Vec<DumpRow>) -> Self {
        let classes = column_norms.len();
        Self {
            header: DumpHeader {
                format: LOGITS_DUMP_FORMAT.into(),
                version: LOGITS_DUMP_VERSION,
                classes,
                step_size,
                tasks: if step_size == 0 { 0 } else { classes / step_size },
                column_norms,
            },
            rows,
        }
    }

    /// Dumps `model`'s logits for `samples` (`(id, is_id, input)`).
    pub fn from_model<'a>(
        model: &MicroClassifier,
        step_size: usize,
        samples: impl IntoIterator<Item = (String, bool, &'a [f64])>,
    ) -> Result<Self> {
        let norms = l2_column_norms(model.head())?;
        let rows = samples
            .into_iter()
            .map(|(id, is_id, x)| {
                Ok(DumpRow {
                    id,
                    is_id,
                    logits: model.logits(x)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(step_size, norms, rows))
    }

    /// JSON lines: the header, then one row per sample.
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let io = |e| Error::io("<logits dump>", e);
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n").map_err(io)?;
        for row in &self.rows {
            serde_json::to_writer(&mut w, row)?;
            w.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn read(r: impl BufRead, source_name: &str) -> Result<Self> {
        let mut lines = r
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::parse(source_name, "missing header line"))?;
        let first = first.map_err(|e| Error::io(source_name, e))?;
        let header: DumpHeader = serde_json::from_str(&first)
            .map_err(|e| Error::parse(source_name, format!("header: {e}")))?;
        if header.format != LOGITS_DUMP_FORMAT || header.version != LOGITS_DUMP_VERSION {
            return Err(Error::parse(
                source_name,
                format!("unsupported dump {} v{}", header.format, header.version),
            ));
        }
        if header.column_norms.len() != header.classes || header.step_size * header.tasks != header.classes {
            return Err(Error::parse(
                source_name,
                format!(
                    "header inconsistent: classes {}, step size {}, tasks {}, {} column norms",
                    header.classes,
                    header.step_size,
                    header.tasks,
                    header.column_norms.len()
                ),
            ));
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            let row: DumpRow = serde_json::from_str(&line)
                .map_err(|e| Error::parse(source_name, format!("line {}: {e}", i + 1)))?;
            if row.logits.len() != header.classes {
                return Err(Error::parse(
                    source_name,
                    format!("line {}: {} logits, header says {}", i + 1, row.logits.len(), header.classes),
                ));
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::parse(source_name, "dump has zero rows"));
        }
        Ok(Self { header, rows })
    }

    /// Scores every row; fails for scorers that need the model (ODIN).
    pub fn score(&self, spec: &ScorerSpec) -> Result<Vec<f64>> {
        if !spec.works_on_logits() {
            return Err(Error::UnsupportedInDumpMode(spec.name()));
        }
        self.rows
            .iter()
            .map(|r| score_logits(spec, &r.logits, Some(&self.header.column_norms), self.header.step_size))
            .collect()
    }
}
