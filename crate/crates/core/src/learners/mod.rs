//! Per-node base learners.
//!
//! Every [`TrainedModel`] carries the [`Preprocessor`] fit on its own
//! training rows (standardization followed by a PCA rotation), so prediction
//! always applies training-only statistics.

use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub mod grid;
pub mod preprocess;
pub mod softmax;
pub mod svm;

pub use grid::{
    grid_search, specimen_accuracy, GridEvaluation, GridPhase, GridPoint, GridResult, GridSpec, LabeledSpecimen,
};
pub use preprocess::{fit_preprocessor, PreprocessConfig, Preprocessor};
pub use softmax::{softmax, train_softmax, SoftmaxHyper, SoftmaxParams};
pub use svm::{solve_binary, train_svm, BinarySolution, SvmHyper, SvmParams};

/// Class value as seen by a learner. The hierarchy layer maps taxon ids and
/// the sentinel onto these.
pub type ClassId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("training data contains a single class")]
    SingleClass,
    #[error("input contains NaN or infinite values")]
    NonFiniteInput,
    #[error("expected {expected} features, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("label count {labels} does not match row count {rows}")]
    LabelCount { labels: usize, rows: usize },
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("inconsistent model: {0}")]
    Inconsistent(String),
}

/// Dense row-major matrix of feature vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Features {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(cols: usize) -> Self {
        Features {
            rows: 0,
            cols,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LearnerError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut out = Features::new(cols);
        for r in rows {
            out.push_row(r.as_ref())?;
        }
        Ok(out)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape mismatch");
        Features { rows, cols, data }
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<(), LearnerError> {
        if row.len() != self.cols {
            return Err(LearnerError::DimensionMismatch {
                expected: self.cols,
                found: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn select(&self, indices: &[usize]) -> Features {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Features {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Output of a model for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewOutput {
    pub label: ClassId,
    /// pre-normalization class scores, aligned with the model's classes
    pub scores: Option<Vec<f64>>,
    /// one-vs-one votes, aligned with the model's classes
    pub votes: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Svm,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelParams {
    Svm(SvmParams),
    Softmax(SoftmaxParams),
}

/// Records which rows the preprocessor was fit on. A model is leak-free when
/// this matches the digest of its own training matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Audit {
    pub training_digest: String,
    pub preprocessor_digest: String,
    pub training_rows: usize,
}

impl Audit {
    pub fn fit_on_training_only(&self) -> bool {
        self.training_digest == self.preprocessor_digest
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    /// sorted ascending
    pub classes: Vec<ClassId>,
    pub preprocessor: Preprocessor,
    pub params: ModelParams,
    pub audit: Audit,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self.params {
            ModelParams::Svm(_) => ModelKind::Svm,
            ModelParams::Softmax(_) => ModelKind::Softmax,
        }
    }

    pub fn has_scores(&self) -> bool {
        self.kind() == ModelKind::Softmax
    }

    pub fn input_dim(&self) -> usize {
        self.preprocessor.input_dim()
    }

    /// Shapes of a deserialized model agree, so prediction cannot index out
    /// of bounds.
    pub fn check(&self) -> Result<(), LearnerError> {
        let k = self.classes.len();
        if k == 0 || self.classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LearnerError::Inconsistent(
                "classes must be non-empty and strictly ascending".into(),
            ));
        }
        self.preprocessor.check().map_err(LearnerError::Inconsistent)?;
        let (dim, params) = match &self.params {
            ModelParams::Svm(p) => (p.dim, p.check(k)),
            ModelParams::Softmax(p) => (p.dim, p.check(k)),
        };
        params.map_err(LearnerError::Inconsistent)?;
        if dim != self.preprocessor.output_dim() {
            return Err(LearnerError::Inconsistent(format!(
                "parameters of dimension {dim} after a preprocessor producing {}",
                self.preprocessor.output_dim()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, x: &Features) -> Result<Vec<ViewOutput>, LearnerError> {
        if x.is_empty() {
            return Ok(Vec::new());
        }
        if x.cols() != self.input_dim() {
            return Err(LearnerError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.cols(),
            });
        }
        if !x.is_finite() {
            return Err(LearnerError::NonFiniteInput);
        }
        let z = self.preprocessor.apply(x)?;
        Ok(match &self.params {
            ModelParams::Svm(p) => p.predict(&z, &self.classes),
            ModelParams::Softmax(p) => p.predict(&z, &self.classes),
        })
    }

    pub fn predict_labels(&self, x: &Features) -> Result<Vec<ClassId>, LearnerError> {
        Ok(self.predict(x)?.into_iter().map(|o| o.label).collect())
    }
}

pub(crate) fn sorted_classes(y: &[ClassId]) -> Vec<ClassId> {
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
}

pub(crate) fn check_training(x: &Features, y: &[ClassId]) -> Result<Vec<ClassId>, LearnerError> {
    if y.len() != x.rows() {
        return Err(LearnerError::LabelCount {
            labels: y.len(),
            rows: x.rows(),
        });
    }
    if !x.is_finite() {
        return Err(LearnerError::NonFiniteInput);
    }
    let classes = sorted_classes(y);
    if classes.len() < 2 {
        return Err(LearnerError::SingleClass);
    }
    Ok(classes)
}

pub(crate) fn digest_rows(x: &Features) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update((x.rows() as u64).to_le_bytes());
    h.update((x.cols() as u64).to_le_bytes());
    for v in x.as_slice() {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// `f64` array serialized as base64 of its little-endian bytes, so model
/// files round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct F64Array(pub Vec<f64>);

impl Serialize for F64Array {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut bytes = Vec::with_capacity(self.0.len() * 8);
        for v in &self.0 {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }
}

impl<'de> Deserialize<'de> for F64Array {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(text.as_bytes())
            .map_err(serde::de::Error::custom)?;
        if bytes.len() % 8 != 0 {
            return Err(serde::de::Error::custom("array length is not a multiple of 8"));
        }
        Ok(F64Array(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        ))
    }
}
