//! One-class SVM novelty detector.
//!
//! Training solves the ν-parameterized dual
//!
//! ```text
//! minimize   ½ αᵀ K α
//! subject to 0 ≤ αᵢ ≤ 1/(ν n),  Σ αᵢ = 1
//! ```
//!
//! with pairwise coordinate updates on the maximal KKT-violating pair. The
//! decision function is `f(x) = sign(Σ αᵢ K(xᵢ, x) − ρ)` with a Gaussian
//! kernel, and `sign(0)` counts as an inlier.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::AnomalyFlag;
use crate::linalg::{squared_distance, Matrix};

pub const DEFAULT_NU: f64 = 0.1;
pub const DEFAULT_TOL: f64 = 1e-6;
/// Coefficients at or below this are not kept as support vectors.
pub const SUPPORT_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("nu = {nu} outside [1/n, 1] for n = {n}")]
    BadNu { nu: f64, n: usize },
    #[error("training data contains non-finite values")]
    NonFinite,
    #[error("training data is empty")]
    Empty,
    #[error("gamma_kernel must be positive, got {0}")]
    BadGamma(f64),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("solver did not converge within {0} iterations")]
    NotConverged(usize),
}

/// Gaussian kernel `K(a, b) = exp(−gamma_kernel · ‖a − b‖²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub gamma_kernel: f64,
}

impl KernelParams {
    pub fn new(gamma_kernel: f64) -> Result<Self, SvmError> {
        if !(gamma_kernel.is_finite() && gamma_kernel > 0.0) {
            return Err(SvmError::BadGamma(gamma_kernel));
        }
        Ok(Self { gamma_kernel })
    }

    /// `1 / (k · median pairwise squared distance)`; falls back to `1/k` when
    /// every pair coincides.
    pub fn median_heuristic(data: &Matrix) -> Self {
        let n = data.rows();
        let k = data.cols().max(1) as f64;
        let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                dists.push(squared_distance(data.row(i), data.row(j)));
            }
        }
        let median = if dists.is_empty() {
            0.0
        } else {
            let mid = dists.len() / 2;
            let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
            *m
        };
        let gamma = if median > 0.0 { 1.0 / (k * median) } else { 1.0 / k };
        Self { gamma_kernel: gamma }
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        (-self.gamma_kernel * squared_distance(a, b)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Matrix,
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub kernel: KernelParams,
    pub nu: f64,
    /// Size of the training set the box bound 1/(νn) refers to.
    pub n_train: usize,
}

/// Serialized form: `{support_vectors, alphas, rho, gamma_kernel, nu}`.
#[derive(Serialize, Deserialize)]
struct SvmFile {
    support_vectors: Vec<Vec<f64>>,
    alphas: Vec<f64>,
    rho: f64,
    gamma_kernel: f64,
    nu: f64,
    #[serde(default)]
    n_train: Option<usize>,
}

/// Training diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub iterations: usize,
    pub final_violation: f64,
    pub free_count: usize,
    pub bound_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvmConfig {
    pub nu: f64,
    /// `None` selects the median heuristic at training time.
    pub gamma_kernel: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { nu: DEFAULT_NU, gamma_kernel: None, tol: DEFAULT_TOL, max_iter: 10_000_000 }
    }
}

pub fn train(data: &Matrix, nu: f64, kernel: KernelParams, tol: f64) -> Result<SvmModel, SvmError> {
    let config = SvmConfig { nu, gamma_kernel: Some(kernel.gamma_kernel), tol, ..SvmConfig::default() };
    train_with_report(data, &config).map(|(m, _)| m)
}

pub fn train_with_config(data: &Matrix, config: &SvmConfig) -> Result<SvmModel, SvmError> {
    train_with_report(data, config).map(|(m, _)| m)
}

pub fn train_with_report(data: &Matrix, config: &SvmConfig) -> Result<(SvmModel, TrainReport), SvmError> {
    let n = data.rows();
    if n == 0 {
        return Err(SvmError::Empty);
    }
    if !data.is_finite() {
        return Err(SvmError::NonFinite);
    }
    let nu = config.nu;
    if !(nu.is_finite() && nu <= 1.0 && nu * n as f64 >= 1.0 - 1e-12) {
        return Err(SvmError::BadNu { nu, n });
    }
    if !(config.tol.is_finite() && config.tol > 0.0) {
        return Err(SvmError::BadTolerance(config.tol));
    }
    let kernel = match config.gamma_kernel {
        Some(g) => KernelParams::new(g)?,
        None => KernelParams::median_heuristic(data),
    };

    let upper = 1.0 / (nu * n as f64);
    let q = kernel_matrix(data, &kernel);

    let mut alpha = vec![0.0; n];
    let mut remaining = 1.0;
    for a in alpha.iter_mut() {
        if remaining <= 0.0 {
            break;
        }
        let take = upper.min(remaining);
        *a = take;
        remaining -= take;
    }
    // Float residue from the fill: fold it into the last nonzero coefficient.
    if remaining.abs() > 0.0 {
        if let Some(last) = alpha.iter_mut().rev().find(|a| **a > 0.0) {
            *last = (*last + remaining).min(upper);
        }
    }

    let mut grad = vec![0.0; n];
    for (i, g) in grad.iter_mut().enumerate() {
        let row = q.row(i);
        *g = alpha.iter().zip(row).map(|(a, k)| a * k).sum();
    }

    let mut iterations = 0;
    let mut violation;
    loop {
        // i: may grow (α < C), smallest gradient; j: may shrink (α > 0), largest gradient.
        let mut i_up = usize::MAX;
        let mut g_min = f64::INFINITY;
        let mut j_low = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] < upper && grad[t] < g_min {
                g_min = grad[t];
                i_up = t;
            }
            if alpha[t] > 0.0 && grad[t] > g_max {
                g_max = grad[t];
                j_low = t;
            }
        }
        violation = if i_up == usize::MAX || j_low == usize::MAX { 0.0 } else { g_max - g_min };
        if violation < config.tol {
            break;
        }
        if iterations >= config.max_iter {
            return Err(SvmError::NotConverged(iterations));
        }
        iterations += 1;

        let (i, j) = (i_up, j_low);
        let eta = (q[(i, i)] + q[(j, j)] - 2.0 * q[(i, j)]).max(1e-12);
        let room_i = upper - alpha[i];
        let room_j = alpha[j];
        let step = violation / eta;
        let t = step.min(room_i).min(room_j);
        if t == room_i {
            alpha[i] = upper;
        } else {
            alpha[i] += t;
        }
        if t == room_j {
            alpha[j] = 0.0;
        } else {
            alpha[j] -= t;
        }
        let (qi, qj) = (q.row(i), q.row(j));
        for ((g, a), b) in grad.iter_mut().zip(qi).zip(qj) {
            *g += t * (a - b);
        }
    }

    let free: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0 && alpha[t] < upper).collect();
    let bound_count = (0..n).filter(|&t| alpha[t] >= upper).count();
    let rho = if free.is_empty() {
        (0..n)
            .filter(|&t| alpha[t] > 0.0)
            .map(|t| grad[t])
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        free.iter().map(|&t| grad[t]).sum::<f64>() / free.len() as f64
    };

    let keep: Vec<usize> = (0..n).filter(|&t| alpha[t] > SUPPORT_THRESHOLD).collect();
    let mut sv = Matrix::zeros(keep.len(), data.cols());
    for (r, &t) in keep.iter().enumerate() {
        sv.row_mut(r).copy_from_slice(data.row(t));
    }
    let model = SvmModel {
        support_vectors: sv,
        alphas: keep.iter().map(|&t| alpha[t]).collect(),
        rho,
        kernel,
        nu,
        n_train: n,
    };
    let report = TrainReport { iterations, final_violation: violation, free_count: free.len(), bound_count };
    Ok((model, report))
}

fn kernel_matrix(data: &Matrix, kernel: &KernelParams) -> Matrix {
    let n = data.rows();
    let mut q = Matrix::zeros(n, n);
    for i in 0..n {
        q[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let v = kernel.eval(data.row(i), data.row(j));
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
    q
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.cols()
    }

    pub fn upper_bound(&self) -> f64 {
        1.0 / (self.nu * self.n_train as f64)
    }

    /// `Σ αᵢ K(xᵢ, x) − ρ`.
    pub fn score(&self, x: &[f64]) -> Result<f64, SvmError> {
        if x.len() != self.dim() {
            return Err(SvmError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let sum: f64 = self
            .support_vectors
            .iter_rows()
            .zip(&self.alphas)
            .map(|(sv, a)| a * self.kernel.eval(sv, x))
            .sum();
        Ok(sum - self.rho)
    }

    pub fn decision(&self, x: &[f64]) -> Result<(f64, AnomalyFlag), SvmError> {
        let score = self.score(x)?;
        let flag = if score >= 0.0 { AnomalyFlag::Inlier } else { AnomalyFlag::Outlier };
        Ok((score, flag))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(SvmFile {
            support_vectors: self.support_vectors.to_rows(),
            alphas: self.alphas.clone(),
            rho: self.rho,
            gamma_kernel: self.kernel.gamma_kernel,
            nu: self.nu,
            n_train: Some(self.n_train),
        })
        .expect("svm model serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self, serde_json::Error> {
        use serde::de::Error as _;
        let f: SvmFile = serde_json::from_value(value)?;
        let support_vectors =
            Matrix::from_rows(&f.support_vectors).ok_or_else(|| serde_json::Error::custom("ragged support vectors"))?;
        if support_vectors.rows() != f.alphas.len() || f.alphas.is_empty() {
            return Err(serde_json::Error::custom("support vector / alpha count mismatch"));
        }
        let kernel = KernelParams::new(f.gamma_kernel).map_err(serde_json::Error::custom)?;
        // Without a recorded training size, the smallest n consistent with the box bound.
        let n_train = f.n_train.unwrap_or_else(|| {
            let max_alpha = f.alphas.iter().cloned().fold(0.0, f64::max);
            ((1.0 / (f.nu * max_alpha)).floor() as usize).max(f.alphas.len())
        });
        Ok(Self { support_vectors, alphas: f.alphas, rho: f.rho, kernel, nu: f.nu, n_train })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use rand::Rng;

    fn cluster_with_far_point() -> Matrix {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rng = SplitMix64::new(4);
        for _ in 0..9 {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r: f64 = rng.random_range(0.0..0.09);
            rows.push(vec![r * angle.cos(), r * angle.sin()]);
        }
        rows.push(vec![10.0, 0.0]);
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn single_point_has_one_feasible_solution() {
        let data = Matrix::from_rows(&[[0.3, -1.2]]).unwrap();
        let model = train(&data, 1.0, KernelParams::new(0.7).unwrap(), 1e-6).unwrap();
        assert_eq!(model.alphas, vec![1.0]);
        assert_eq!(model.rho, 1.0);
        let (score, flag) = model.decision(&[0.3, -1.2]).unwrap();
        assert_eq!(score, 0.0);
        assert_eq!(flag, AnomalyFlag::Inlier);
    }

    #[test]
    fn far_point_scores_negative() {
        let data = cluster_with_far_point();
        let model = train(&data, 0.2, KernelParams::new(0.5).unwrap(), 1e-8).unwrap();
        let (score, flag) = model.decision(&[10.0, 0.0]).unwrap();
        assert!(score < 0.0, "far point score {score}");
        assert_eq!(flag, AnomalyFlag::Outlier);
        let (centre, _) = model.decision(&[0.0, 0.0]).unwrap();
        assert!(centre > 0.0);
    }

    #[test]
    fn dual_feasibility_holds() {
        let data = cluster_with_far_point();
        for nu in [0.1, 0.2, 0.5, 1.0] {
            let model = train(&data, nu, KernelParams::new(0.5).unwrap(), 1e-6).unwrap();
            let sum: f64 = model.alphas.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "nu {nu}: sum {sum}");
            let c = model.upper_bound();
            assert!(model.alphas.iter().all(|&a| a > 0.0 && a <= c + 1e-9));
        }
    }

    #[test]
    fn hand_built_model_scores() {
        let model = SvmModel {
            support_vectors: Matrix::from_rows(&[[1.0, 2.0]]).unwrap(),
            alphas: vec![1.0],
            rho: 0.0,
            kernel: KernelParams::new(0.5).unwrap(),
            nu: 1.0,
            n_train: 1,
        };
        assert_eq!(model.decision(&[1.0, 2.0]).unwrap(), (1.0, AnomalyFlag::Inlier));
        let mut last = f64::INFINITY;
        for step in 0..20 {
            let s = model.score(&[1.0 + 0.25 * step as f64, 2.0]).unwrap();
            assert!(s <= last);
            last = s;
        }
        assert!(matches!(model.score(&[1.0]), Err(SvmError::DimensionMismatch { .. })));
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = cluster_with_far_point();
        let k = KernelParams::new(1.0).unwrap();
        assert!(matches!(train(&data, 0.05, k, 1e-6), Err(SvmError::BadNu { .. })));
        assert!(matches!(train(&data, 1.5, k, 1e-6), Err(SvmError::BadNu { .. })));
        let bad = Matrix::from_rows(&[[f64::NAN, 1.0]]).unwrap();
        assert_eq!(train(&bad, 1.0, k, 1e-6), Err(SvmError::NonFinite));
        assert!(KernelParams::new(0.0).is_err());
    }

    #[test]
    fn kernel_properties() {
        let k = KernelParams::new(0.3).unwrap();
        let mut rng = SplitMix64::new(17);
        for _ in 0..200 {
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert_eq!(k.eval(&a, &a), 1.0);
            let kab = k.eval(&a, &b);
            assert!(kab > 0.0 && kab <= 1.0);
            assert_eq!(kab, k.eval(&b, &a));
        }
    }

    #[test]
    fn median_heuristic_gamma() {
        let data = Matrix::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
        // Pairwise squared distances 1, 9, 4: median 4, k = 1.
        assert_eq!(KernelParams::median_heuristic(&data).gamma_kernel, 0.25);
    }

    #[test]
    fn json_round_trip() {
        let data = cluster_with_far_point();
        let model = train(&data, 0.2, KernelParams::new(0.5).unwrap(), 1e-6).unwrap();
        let json = model.to_json();
        for key in ["support_vectors", "alphas", "rho", "gamma_kernel", "nu"] {
            assert!(json.get(key).is_some());
        }
        assert_eq!(SvmModel::from_json(json).unwrap(), model);
    }
}
