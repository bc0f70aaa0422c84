//! Standardization followed by a principal component rotation.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{digest_rows, F64Array, Features, LearnerError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub pca: bool,
    /// Keep the leading components explaining at least this share of the
    /// variance. `None` keeps all of them (a pure rotation).
    pub retained_variance: Option<f64>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            pca: true,
            retained_variance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    mean: F64Array,
    sd: F64Array,
    /// input_dim x components, row-major
    rotation: F64Array,
    components: usize,
    /// eigenvalues of the standardized covariance, descending
    explained: F64Array,
    constant_features: Vec<usize>,
    fit_digest: String,
}

impl Preprocessor {
    pub fn input_dim(&self) -> usize {
        self.mean.0.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean.0
    }

    pub fn sd(&self) -> &[f64] {
        &self.sd.0
    }

    /// Column `k` of the rotation.
    pub fn component(&self, k: usize) -> Vec<f64> {
        (0..self.input_dim())
            .map(|i| self.rotation.0[i * self.components + k])
            .collect()
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained.0
    }

    /// Features whose sd was zero and got replaced by 1.
    pub fn constant_features(&self) -> &[usize] {
        &self.constant_features
    }

    pub fn fit_digest(&self) -> &str {
        &self.fit_digest
    }

    /// Array shapes agree with each other, as after deserializing.
    pub fn check(&self) -> Result<(), String> {
        let d = self.input_dim();
        if self.sd.0.len() != d {
            return Err(format!("{} sds for {d} features", self.sd.0.len()));
        }
        if self.components > d || self.rotation.0.len() != d * self.components {
            return Err(format!(
                "rotation of {} values for {d}x{}",
                self.rotation.0.len(),
                self.components
            ));
        }
        if self.constant_features.iter().any(|&j| j >= d) {
            return Err("constant feature index out of range".into());
        }
        Ok(())
    }

    pub fn apply(&self, x: &Features) -> Result<Features, LearnerError> {
        let d = self.input_dim();
        if x.cols() != d {
            return Err(LearnerError::DimensionMismatch {
                expected: d,
                found: x.cols(),
            });
        }
        let k = self.components;
        let mut out = Vec::with_capacity(x.rows() * k);
        let mut z = vec![0.0; d];
        for row in x.iter_rows() {
            for (j, v) in row.iter().enumerate() {
                z[j] = (v - self.mean.0[j]) / self.sd.0[j];
            }
            for c in 0..k {
                let mut acc = 0.0;
                for (j, zj) in z.iter().enumerate() {
                    acc += zj * self.rotation.0[j * k + c];
                }
                out.push(acc);
            }
        }
        Ok(Features::from_vec(x.rows(), k, out))
    }
}

pub fn fit_preprocessor(x: &Features, config: &PreprocessConfig) -> Result<Preprocessor, LearnerError> {
    let n = x.rows();
    let d = x.cols();
    if n < 2 {
        return Err(LearnerError::TooFewRows { needed: 2, found: n });
    }
    if !x.is_finite() {
        return Err(LearnerError::NonFiniteInput);
    }
    let mut mean = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut sd = vec![0.0; d];
    for row in x.iter_rows() {
        for ((s, v), m) in sd.iter_mut().zip(row).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let mut constant_features = Vec::new();
    for (j, s) in sd.iter_mut().enumerate() {
        *s = (*s / (n - 1) as f64).sqrt();
        if *s <= f64::EPSILON * (1.0 + mean[j].abs()) {
            constant_features.push(j);
            *s = 1.0;
        }
    }
    if !constant_features.is_empty() {
        warn!("constant features {constant_features:?} left unscaled");
    }

    let (rotation, components, explained) = if config.pca {
        pca_rotation(x, &mean, &sd, config.retained_variance)
    } else {
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        (eye, d, vec![1.0; d])
    };

    Ok(Preprocessor {
        mean: F64Array(mean),
        sd: F64Array(sd),
        rotation: F64Array(rotation),
        components,
        explained: F64Array(explained),
        constant_features,
        fit_digest: digest_rows(x),
    })
}

fn pca_rotation(x: &Features, mean: &[f64], sd: &[f64], retained: Option<f64>) -> (Vec<f64>, usize, Vec<f64>) {
    let n = x.rows();
    let d = x.cols();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut z = vec![0.0; d];
    for row in x.iter_rows() {
        for j in 0..d {
            z[j] = (row[j] - mean[j]) / sd[j];
        }
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += z[a] * z[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let explained: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let components = match retained {
        None => d,
        Some(share) => {
            let total: f64 = explained.iter().sum();
            let mut acc = 0.0;
            let mut k = 0;
            while k < d && (total <= 0.0 || acc / total < share) {
                acc += explained[k];
                k += 1;
            }
            k.max(1)
        }
    };
    let mut rotation = vec![0.0; d * components];
    for (c, &src) in order.iter().take(components).enumerate() {
        let col = eig.eigenvectors.column(src);
        // fix the sign so the largest-magnitude loading is positive
        let pivot = (0..d)
            .max_by(|&a, &b| {
                col[a]
                    .abs()
                    .partial_cmp(&col[b].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            rotation[j * components + c] = sign * col[j];
        }
    }
    (rotation, components, explained)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random(n: usize, d: usize, seed: u64) -> Features {
        let mut rng = SeededRng::new(seed, 0);
        Features::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect())
    }

    fn column_means(x: &Features) -> Vec<f64> {
        (0..x.cols())
            .map(|j| x.iter_rows().map(|r| r[j]).sum::<f64>() / x.rows() as f64)
            .collect()
    }

    #[test]
    fn transformed_training_data_is_centered() {
        let x = random(200, 5, 1);
        let p = fit_preprocessor(&x, &PreprocessConfig::default()).unwrap();
        let z = p.apply(&x).unwrap();
        assert!(column_means(&z).iter().all(|m| m.abs() < 1e-9));
    }

    #[test]
    fn rotation_is_orthonormal() {
        let x = random(300, 6, 2);
        let p = fit_preprocessor(&x, &PreprocessConfig::default()).unwrap();
        for a in 0..6 {
            for b in 0..6 {
                let dot: f64 = p.component(a).iter().zip(p.component(b)).map(|(u, v)| u * v).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8, "{a} {b} {dot}");
            }
        }
    }

    #[test]
    fn isotropic_data_gives_signed_permutation() {
        // exactly standardized, uncorrelated columns
        let rows = vec![[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
        let x = Features::from_rows(&rows).unwrap();
        let p = fit_preprocessor(&x, &PreprocessConfig::default()).unwrap();
        for k in 0..3 {
            let c = p.component(k);
            let big = c.iter().filter(|v| (v.abs() - 1.0).abs() < 1e-9).count();
            let zero = c.iter().filter(|v| v.abs() < 1e-9).count();
            assert_eq!((big, zero), (1, 2), "{c:?}");
        }
    }

    /// Power iteration on the standardized covariance, independent of the
    /// eigen solver.
    fn leading_share_by_power_iteration(x: &Features) -> f64 {
        let n = x.rows() as f64;
        let d = x.cols();
        let means = column_means(x);
        let sds: Vec<f64> = (0..d)
            .map(|j| (x.iter_rows().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
            .collect();
        let mut cov = vec![vec![0.0; d]; d];
        for r in x.iter_rows() {
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] += (r[a] - means[a]) / sds[a] * (r[b] - means[b]) / sds[b] / (n - 1.0);
                }
            }
        }
        let mut v = vec![1.0; d];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let w: Vec<f64> = (0..d).map(|a| (0..d).map(|b| cov[a][b] * v[b]).sum()).collect();
            lambda = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.iter().map(|x| x / lambda).collect();
        }
        let trace: f64 = (0..d).map(|a| cov[a][a]).sum();
        lambda / trace
    }

    #[test]
    fn rank_one_data_has_one_dominant_component() {
        let mut rng = SeededRng::new(5, 5);
        let dir = [1.0, -2.0, 0.5, 3.0];
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let t = rng.normal();
                dir.iter().map(|d| d * t + 1e-4 * rng.normal()).collect()
            })
            .collect();
        let x = Features::from_rows(&rows).unwrap();
        let oracle = leading_share_by_power_iteration(&x);
        assert!(oracle >= 0.999);
        let p = fit_preprocessor(&x, &PreprocessConfig::default()).unwrap();
        let ev = p.explained_variance();
        let share = ev[0] / ev.iter().sum::<f64>();
        assert!(share >= 0.999);
        assert!((share - oracle).abs() < 1e-9);
        let reduced = fit_preprocessor(
            &x,
            &PreprocessConfig {
                pca: true,
                retained_variance: Some(0.99),
            },
        )
        .unwrap();
        assert_eq!(reduced.output_dim(), 1);
    }

    #[test]
    fn constant_feature_and_row_errors() {
        let x = Features::from_rows(&[[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]).unwrap();
        let p = fit_preprocessor(&x, &PreprocessConfig::default()).unwrap();
        assert_eq!(p.constant_features(), &[1]);
        assert!(p.apply(&x).unwrap().is_finite());
        let one = Features::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(
            fit_preprocessor(&one, &PreprocessConfig::default()),
            Err(LearnerError::TooFewRows { needed: 2, found: 1 })
        );
        assert!(p.apply(&Features::from_rows(&[[1.0]]).unwrap()).is_err());
    }
}
