//! C-SVC with a Gaussian (RBF) kernel, trained by sequential minimal
//! optimization with second-order working set selection, and combined into
//! a multiclass classifier by one-vs-one voting.
//!
//! Dual problem per class pair:
//!
//! ```text
//! min_a  1/2 a'Qa - e'a   s.t.  y'a = 0,  0 <= a_i <= C,   Q_ij = y_i y_j k(x_i, x_j)
//! ```
//!
//! with `k(u, v) = exp(-gamma |u - v|^2)`. Decision value
//! `f(x) = sum_i a_i y_i k(x_i, x) - rho`; positive means the first class of
//! the pair.

use std::collections::{HashMap, VecDeque};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::{
    check_training, digest_rows, fit_preprocessor, Audit, ClassId, F64Array, Features, LearnerError, ModelParams,
    PreprocessConfig, TrainedModel, ViewOutput,
};

const TAU: f64 = 1e-12;
const CACHE_BYTES: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmHyper {
    pub c: f64,
    pub gamma: f64,
    /// stopping tolerance on the maximal KKT violation
    pub tolerance: f64,
}

impl SvmHyper {
    pub fn new(c: f64, gamma: f64) -> Self {
        SvmHyper {
            c,
            gamma,
            tolerance: 1e-3,
        }
    }

    fn validate(&self) -> Result<(), LearnerError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.c) && ok(self.gamma) && ok(self.tolerance) {
            Ok(())
        } else {
            Err(LearnerError::InvalidHyper(format!(
                "c, gamma and tolerance must be positive (c={}, gamma={}, tol={})",
                self.c, self.gamma, self.tolerance
            )))
        }
    }
}

pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Rows of the signed kernel matrix `Q`, computed on demand and kept in a
/// bounded FIFO cache.
struct QMatrix<'a> {
    x: &'a Features,
    y: &'a [f64],
    gamma: f64,
    rows: HashMap<usize, Rc<[f64]>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> QMatrix<'a> {
    fn new(x: &'a Features, y: &'a [f64], gamma: f64) -> Self {
        let n = x.rows().max(1);
        QMatrix {
            x,
            y,
            gamma,
            rows: HashMap::new(),
            order: VecDeque::new(),
            capacity: (CACHE_BYTES / (8 * n)).max(2),
        }
    }

    fn row(&mut self, i: usize) -> Rc<[f64]> {
        if let Some(r) = self.rows.get(&i) {
            return Rc::clone(r);
        }
        let xi = self.x.row(i);
        let yi = self.y[i];
        let row: Rc<[f64]> = (0..self.x.rows())
            .map(|j| yi * self.y[j] * rbf(self.gamma, xi, self.x.row(j)))
            .collect();
        if self.rows.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.rows.remove(&old);
            }
        }
        self.rows.insert(i, Rc::clone(&row));
        self.order.push_back(i);
        row
    }
}

/// Result of one binary SMO run.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    /// final gradient of the dual objective, `Q a - e`
    pub gradient: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl BinarySolution {
    /// Per-point KKT violation of the margin conditions given labels `y`
    /// (+1/-1) and penalty `c`.
    pub fn kkt_violations(&self, y: &[f64], c: f64) -> Vec<f64> {
        self.alpha
            .iter()
            .zip(&self.gradient)
            .zip(y)
            .map(|((&a, &g), &yi)| {
                // y_i f(x_i) - 1
                let margin = g - yi * self.rho;
                if a <= 0.0 {
                    (-margin).max(0.0)
                } else if a >= c {
                    margin.max(0.0)
                } else {
                    margin.abs()
                }
            })
            .collect()
    }

    /// `f(x_i)` for every training point.
    pub fn training_decisions(&self, y: &[f64]) -> Vec<f64> {
        self.gradient
            .iter()
            .zip(y)
            .map(|(g, yi)| yi * (g + 1.0) - self.rho)
            .collect()
    }
}

/// Solve the binary dual for rows `x` with labels `y` in {+1, -1}.
pub fn solve_binary(x: &Features, y: &[f64], hyper: &SvmHyper) -> Result<BinarySolution, LearnerError> {
    hyper.validate()?;
    if y.len() != x.rows() {
        return Err(LearnerError::LabelCount {
            labels: y.len(),
            rows: x.rows(),
        });
    }
    if !y.iter().any(|v| *v > 0.0) || !y.iter().any(|v| *v < 0.0) {
        return Err(LearnerError::SingleClass);
    }
    let n = x.rows();
    let c = hyper.c;
    let eps = hyper.tolerance;
    let max_iter = (100 * n).max(10_000_000);
    let mut q = QMatrix::new(x, y, hyper.gamma);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    // k(x, x) = 1 for the RBF kernel
    let qd = 1.0;

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let Some((i, j)) = select_working_set(&mut q, y, &alpha, &grad, c, eps, qd) else {
            converged = true;
            break;
        };
        iterations += 1;
        let qi = q.row(i);
        let qj = q.row(j);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);

        if y[i] != y[j] {
            let quad = (qd + qd + 2.0 * qi[j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd + qd - 2.0 * qi[j]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let di = alpha[i] - old_ai;
        let dj = alpha[j] - old_aj;
        for k in 0..n {
            grad[k] += qi[k] * di + qj[k] * dj;
        }
    }
    if !converged {
        log::warn!("SMO stopped after {iterations} iterations without reaching tolerance {eps}");
    }

    let rho = compute_rho(y, &alpha, &grad, c);
    let objective = alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>() / 2.0;
    Ok(BinarySolution {
        alpha,
        rho,
        gradient: grad,
        objective,
        iterations,
        converged,
    })
}

fn select_working_set(
    q: &mut QMatrix<'_>,
    y: &[f64],
    alpha: &[f64],
    grad: &[f64],
    c: f64,
    eps: f64,
    qd: f64,
) -> Option<(usize, usize)> {
    let n = y.len();
    let mut gmax = f64::NEG_INFINITY;
    let mut gmax_idx = None;
    for t in 0..n {
        if y[t] > 0.0 {
            if alpha[t] < c && -grad[t] >= gmax {
                gmax = -grad[t];
                gmax_idx = Some(t);
            }
        } else if alpha[t] > 0.0 && grad[t] >= gmax {
            gmax = grad[t];
            gmax_idx = Some(t);
        }
    }
    let i = gmax_idx?;
    let qi = q.row(i);
    let mut gmax2 = f64::NEG_INFINITY;
    let mut gmin_idx = None;
    let mut obj_diff_min = f64::INFINITY;
    for j in 0..n {
        if y[j] > 0.0 {
            if alpha[j] > 0.0 {
                let grad_diff = gmax + grad[j];
                gmax2 = gmax2.max(grad[j]);
                if grad_diff > 0.0 {
                    let quad = qd + qd - 2.0 * y[i] * qi[j];
                    let obj_diff = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                    if obj_diff <= obj_diff_min {
                        gmin_idx = Some(j);
                        obj_diff_min = obj_diff;
                    }
                }
            }
        } else if alpha[j] < c {
            let grad_diff = gmax - grad[j];
            gmax2 = gmax2.max(-grad[j]);
            if grad_diff > 0.0 {
                let quad = qd + qd + 2.0 * y[i] * qi[j];
                let obj_diff = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                if obj_diff <= obj_diff_min {
                    gmin_idx = Some(j);
                    obj_diff_min = obj_diff;
                }
            }
        }
    }
    if gmax + gmax2 < eps {
        return None;
    }
    gmin_idx.map(|j| (i, j))
}

fn compute_rho(y: &[f64], alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free = 0usize;
    let mut sum_free = 0.0;
    for t in 0..y.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// One binary machine of the one-vs-one ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    /// positions in the model's class list; `first` wins on f(x) > 0
    pub first: usize,
    pub second: usize,
    /// indices into the shared support vector store
    pub support: Vec<u32>,
    /// `a_i y_i` for each support vector
    pub coef: F64Array,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub hyper: SvmHyper,
    pub dim: usize,
    /// support vectors in preprocessed space, row-major
    pub support_vectors: F64Array,
    pub pairs: Vec<PairModel>,
}

impl SvmParams {
    fn sv(&self, k: usize) -> &[f64] {
        &self.support_vectors.0[k * self.dim..(k + 1) * self.dim]
    }

    fn sv_count(&self) -> usize {
        self.support_vectors.0.len() / self.dim.max(1)
    }

    pub(crate) fn check(&self, classes: usize) -> Result<(), String> {
        if self.dim == 0 || !self.support_vectors.0.len().is_multiple_of(self.dim) {
            return Err(format!(
                "{} support values for dimension {}",
                self.support_vectors.0.len(),
                self.dim
            ));
        }
        let n = self.sv_count();
        for p in &self.pairs {
            if p.first >= classes || p.second >= classes || p.first == p.second {
                return Err(format!("pair ({}, {}) for {classes} classes", p.first, p.second));
            }
            if p.coef.0.len() != p.support.len() {
                return Err(format!(
                    "{} coefficients for {} support vectors",
                    p.coef.0.len(),
                    p.support.len()
                ));
            }
            if p.support.iter().any(|&s| s as usize >= n) {
                return Err(format!("support index beyond {n} stored vectors"));
            }
        }
        Ok(())
    }

    /// Decision value of every pair for one preprocessed row.
    pub fn decisions(&self, z: &[f64]) -> Vec<f64> {
        let kernel: Vec<f64> = (0..self.sv_count())
            .map(|k| rbf(self.hyper.gamma, self.sv(k), z))
            .collect();
        self.pairs
            .iter()
            .map(|p| {
                p.support
                    .iter()
                    .zip(&p.coef.0)
                    .map(|(&s, c)| c * kernel[s as usize])
                    .sum::<f64>()
                    - p.rho
            })
            .collect()
    }

    pub(crate) fn predict(&self, z: &Features, classes: &[ClassId]) -> Vec<ViewOutput> {
        let k = classes.len();
        z.iter_rows()
            .map(|row| {
                let dec = self.decisions(row);
                let mut votes = vec![0u32; k];
                let mut margin = vec![0.0; k];
                for (p, d) in self.pairs.iter().zip(&dec) {
                    if *d > 0.0 {
                        votes[p.first] += 1;
                    } else {
                        votes[p.second] += 1;
                    }
                    margin[p.first] += d;
                    margin[p.second] -= d;
                }
                // most votes, then largest summed margin, then lowest class
                let best = (0..k)
                    .max_by(|&a, &b| {
                        votes[a]
                            .cmp(&votes[b])
                            .then(margin[a].partial_cmp(&margin[b]).unwrap_or(std::cmp::Ordering::Equal))
                            .then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                ViewOutput {
                    label: classes[best],
                    scores: None,
                    votes: Some(votes),
                }
            })
            .collect()
    }
}

/// Train a one-vs-one RBF SVM. Rows are standardized and PCA-rotated by a
/// preprocessor fit on `x` itself.
pub fn train_svm(
    x: &Features,
    y: &[ClassId],
    hyper: &SvmHyper,
    preprocess: &PreprocessConfig,
) -> Result<TrainedModel, LearnerError> {
    hyper.validate()?;
    let classes = check_training(x, y)?;
    let preprocessor = fit_preprocessor(x, preprocess)?;
    let z = preprocessor.apply(x)?;
    let position: HashMap<ClassId, usize> = classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let class_of: Vec<usize> = y.iter().map(|c| position[c]).collect();

    let pair_list: Vec<(usize, usize)> = (0..classes.len())
        .flat_map(|a| (a + 1..classes.len()).map(move |b| (a, b)))
        .collect();
    let solved: Vec<(usize, usize, Vec<usize>, BinarySolution)> = pair_list
        .iter()
        .map(|&(a, b)| {
            let rows: Vec<usize> = (0..z.rows())
                .filter(|&i| class_of[i] == a || class_of[i] == b)
                .collect();
            let sub = z.select(&rows);
            let sy: Vec<f64> = rows
                .iter()
                .map(|&i| if class_of[i] == a { 1.0 } else { -1.0 })
                .collect();
            solve_binary(&sub, &sy, hyper).map(|s| (a, b, rows, s))
        })
        .collect::<Result<_, _>>()?;

    let mut store_index: HashMap<usize, u32> = HashMap::new();
    let mut store: Vec<f64> = Vec::new();
    let mut pairs = Vec::with_capacity(solved.len());
    for (a, b, rows, sol) in solved {
        let mut support = Vec::new();
        let mut coef = Vec::new();
        for (k, &row) in rows.iter().enumerate() {
            let alpha = sol.alpha[k];
            if alpha > 0.0 {
                let id = *store_index.entry(row).or_insert_with(|| {
                    store.extend_from_slice(z.row(row));
                    (store.len() / z.cols() - 1) as u32
                });
                support.push(id);
                coef.push(alpha * if class_of[row] == a { 1.0 } else { -1.0 });
            }
        }
        pairs.push(PairModel {
            first: a,
            second: b,
            support,
            coef: F64Array(coef),
            rho: sol.rho,
        });
    }

    Ok(TrainedModel {
        classes,
        audit: Audit {
            training_digest: digest_rows(x),
            preprocessor_digest: preprocessor.fit_digest().to_string(),
            training_rows: x.rows(),
        },
        params: ModelParams::Svm(SvmParams {
            hyper: *hyper,
            dim: z.cols(),
            support_vectors: F64Array(store),
            pairs,
        }),
        preprocessor,
    })
}
