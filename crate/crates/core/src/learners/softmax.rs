//! Multinomial logistic regression trained by mini-batch gradient descent.
//!
//! Objective: mean cross-entropy plus `l2 / 2 * |W|^2` (the bias is not
//! penalized). Scores reported at prediction time are the logits `W z + b`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{
    check_training, digest_rows, fit_preprocessor, Audit, ClassId, F64Array, Features, LearnerError, ModelParams,
    PreprocessConfig, TrainedModel, ViewOutput,
};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    /// 0 means full batch
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SoftmaxHyper {
    fn default() -> Self {
        SoftmaxHyper {
            learning_rate: 0.5,
            epochs: 200,
            l2: 1e-4,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl SoftmaxHyper {
    fn validate(&self) -> Result<(), LearnerError> {
        if self.learning_rate.is_finite() && self.learning_rate > 0.0 && self.l2.is_finite() && self.l2 >= 0.0 {
            Ok(())
        } else {
            Err(LearnerError::InvalidHyper(format!(
                "learning rate must be positive and l2 non-negative (lr={}, l2={})",
                self.learning_rate, self.l2
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxParams {
    pub hyper: SoftmaxHyper,
    pub dim: usize,
    /// classes x dim, row-major
    pub weights: F64Array,
    pub bias: F64Array,
}

impl SoftmaxParams {
    pub fn zeros(classes: usize, dim: usize, hyper: SoftmaxHyper) -> Self {
        SoftmaxParams {
            hyper,
            dim,
            weights: F64Array(vec![0.0; classes * dim]),
            bias: F64Array(vec![0.0; classes]),
        }
    }

    pub fn classes(&self) -> usize {
        self.bias.0.len()
    }

    pub(crate) fn check(&self, classes: usize) -> Result<(), String> {
        if self.bias.0.len() != classes || self.weights.0.len() != classes * self.dim {
            return Err(format!(
                "{} weights and {} biases for {classes} classes of dimension {}",
                self.weights.0.len(),
                self.bias.0.len(),
                self.dim
            ));
        }
        Ok(())
    }

    pub fn logits(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim;
        self.bias
            .0
            .iter()
            .enumerate()
            .map(|(k, b)| {
                b + self.weights.0[k * d..(k + 1) * d]
                    .iter()
                    .zip(z)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
            })
            .collect()
    }

    /// Flattened parameter vector: weights then bias.
    pub fn to_vec(&self) -> Vec<f64> {
        self.weights.0.iter().chain(&self.bias.0).copied().collect()
    }

    pub fn set_from(&mut self, theta: &[f64]) {
        let nw = self.weights.0.len();
        self.weights.0.copy_from_slice(&theta[..nw]);
        self.bias.0.copy_from_slice(&theta[nw..]);
    }

    pub(crate) fn predict(&self, z: &Features, classes: &[ClassId]) -> Vec<ViewOutput> {
        z.iter_rows()
            .map(|row| {
                let scores = self.logits(row);
                let mut best = 0;
                for (k, s) in scores.iter().enumerate() {
                    if *s > scores[best] {
                        best = k;
                    }
                }
                ViewOutput {
                    label: classes[best],
                    scores: Some(scores),
                    votes: None,
                }
            })
            .collect()
    }
}

/// Numerically stable softmax normalization.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Objective and its gradient (same layout as [`SoftmaxParams::to_vec`]) over
/// the rows `batch` of `z`, with `y` given as class positions.
pub fn objective_and_gradient(
    params: &SoftmaxParams,
    z: &Features,
    y: &[usize],
    batch: &[usize],
    l2: f64,
) -> (f64, Vec<f64>) {
    let d = params.dim;
    let k = params.classes();
    let mut grad = vec![0.0; k * d + k];
    let mut loss = 0.0;
    let scale = 1.0 / batch.len().max(1) as f64;
    for &i in batch {
        let row = z.row(i);
        let logits = params.logits(row);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_total = logits.iter().map(|s| (s - max).exp()).sum::<f64>().ln() + max;
        loss += (log_total - logits[y[i]]) * scale;
        for c in 0..k {
            let p = (logits[c] - log_total).exp();
            let r = (p - if c == y[i] { 1.0 } else { 0.0 }) * scale;
            for (g, v) in grad[c * d..(c + 1) * d].iter_mut().zip(row) {
                *g += r * v;
            }
            grad[k * d + c] += r;
        }
    }
    for (g, w) in grad[..k * d].iter_mut().zip(&params.weights.0) {
        *g += l2 * w;
    }
    loss += 0.5 * l2 * params.weights.0.iter().map(|w| w * w).sum::<f64>();
    (loss, grad)
}

pub fn train_softmax(
    x: &Features,
    y: &[ClassId],
    hyper: &SoftmaxHyper,
    preprocess: &PreprocessConfig,
) -> Result<TrainedModel, LearnerError> {
    hyper.validate()?;
    let classes = check_training(x, y)?;
    let preprocessor = fit_preprocessor(x, preprocess)?;
    let z = preprocessor.apply(x)?;
    let position: HashMap<ClassId, usize> = classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let yi: Vec<usize> = y.iter().map(|c| position[c]).collect();

    let mut params = SoftmaxParams::zeros(classes.len(), z.cols(), *hyper);
    let n = z.rows();
    let batch = if hyper.batch_size == 0 {
        n
    } else {
        hyper.batch_size.min(n)
    };
    let mut rng = SeededRng::for_label(hyper.seed, "softmax-sgd", &digest_rows(x));
    let mut order: Vec<usize> = (0..n).collect();
    let mut theta = params.to_vec();
    for _ in 0..hyper.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(batch) {
            let (_, grad) = objective_and_gradient(&params, &z, &yi, chunk, hyper.l2);
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= hyper.learning_rate * g;
            }
            params.set_from(&theta);
        }
    }
    if !params.to_vec().iter().all(|v| v.is_finite()) {
        return Err(LearnerError::InvalidHyper(format!(
            "training diverged at learning rate {}",
            hyper.learning_rate
        )));
    }

    Ok(TrainedModel {
        classes,
        audit: Audit {
            training_digest: digest_rows(x),
            preprocessor_digest: preprocessor.fit_digest().to_string(),
            training_rows: n,
        },
        params: ModelParams::Softmax(params),
        preprocessor,
    })
}
