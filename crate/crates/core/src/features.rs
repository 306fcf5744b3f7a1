//! Feature standardization and PCA dimensionality reduction.
//!
//! The eigenbasis comes from a cyclic Jacobi sweep over the d × d covariance,
//! which is exact enough for d ≤ 256 and fully deterministic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, Matrix};

/// Default target dimension after projection.
pub const DEFAULT_COMPONENTS: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid component count {k} for {n} rows × {d} columns")]
    BadComponentCount { k: usize, n: usize, d: usize },
    #[error("data contains non-finite values")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations.
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Matrix) -> Result<Self, FeatureError> {
        let n = data.rows();
        if n < 2 {
            return Err(FeatureError::InsufficientData { needed: 2, got: n });
        }
        if !data.is_finite() {
            return Err(FeatureError::NonFinite);
        }
        let d = data.cols();
        let mut means = vec![0.0; d];
        for row in data.iter_rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n as f64);
        let mut vars = vec![0.0; d];
        for row in data.iter_rows() {
            for ((s, v), m) in vars.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let stds = vars.into_iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(Self { means, stds })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn is_constant(&self, column: usize) -> bool {
        self.stds[column] == 0.0
    }

    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&c| self.is_constant(c)).collect()
    }

    /// Constant columns map to zero.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if x.len() != self.dim() {
            return Err(FeatureError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| if *s == 0.0 { 0.0 } else { (v - m) / s })
            .collect())
    }

    pub fn transform_matrix(&self, data: &Matrix) -> Result<Matrix, FeatureError> {
        let mut out = Matrix::zeros(data.rows(), data.cols());
        for i in 0..data.rows() {
            let row = self.transform(data.row(i))?;
            out.row_mut(i).copy_from_slice(&row);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// k × d, rows orthonormal.
    pub components: Matrix,
    /// Eigenvalues of the retained components, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Trace of the covariance the model was fitted on.
    pub total_variance: f64,
}

impl PcaModel {
    /// Fits the top-`k` principal axes of (already standardized) data.
    ///
    /// Covariance is the population covariance of the mean-centred rows.
    pub fn fit(data: &Matrix, k: usize) -> Result<Self, FeatureError> {
        let (n, d) = (data.rows(), data.cols());
        if n < 2 {
            return Err(FeatureError::InsufficientData { needed: 2, got: n });
        }
        if k == 0 || k > d || k > n - 1 {
            return Err(FeatureError::BadComponentCount { k, n, d });
        }
        if !data.is_finite() {
            return Err(FeatureError::NonFinite);
        }
        let cov = covariance(data);
        let total_variance = (0..d).map(|i| cov[(i, i)]).sum();
        let (eigenvalues, eigenvectors) = jacobi_eigen(&cov);

        let mut order: Vec<usize> = (0..d).collect();
        // Stable sort keeps ties in Jacobi output order, so fits stay bit-identical.
        order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));

        let mut components = Matrix::zeros(k, d);
        let mut explained_variance = Vec::with_capacity(k);
        for (row, &idx) in order.iter().take(k).enumerate() {
            let mut v: Vec<f64> = (0..d).map(|r| eigenvectors[(r, idx)]).collect();
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            components.row_mut(row).copy_from_slice(&v);
            explained_variance.push(eigenvalues[idx].max(0.0));
        }
        let model = Self { components, explained_variance, total_variance };
        if model.is_rank_deficient() {
            log::warn!("PCA fit is rank deficient: retained components include zero variance");
        }
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.components.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.components.cols()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.explained_variance.iter().any(|&v| v <= 1e-12 * self.total_variance.max(1.0))
    }

    /// Cumulative explained-variance ratio of the retained components.
    pub fn coverage(&self) -> f64 {
        if self.total_variance <= 0.0 {
            return 0.0;
        }
        self.explained_variance.iter().sum::<f64>() / self.total_variance
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if x.len() != self.input_dim() {
            return Err(FeatureError::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(self.components.iter_rows().map(|c| dot(c, x)).collect())
    }

    /// Maps a projected vector back into input space.
    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if z.len() != self.k() {
            return Err(FeatureError::DimensionMismatch { expected: self.k(), got: z.len() });
        }
        let mut out = vec![0.0; self.input_dim()];
        for (c, w) in self.components.iter_rows().zip(z) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += w * v;
            }
        }
        Ok(out)
    }
}

/// Standardizer followed by PCA; the unit the engine loads and persists.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePipeline {
    pub standardizer: Standardizer,
    pub pca: PcaModel,
}

#[derive(Serialize, Deserialize)]
struct PipelineFile {
    means: Vec<f64>,
    stds: Vec<f64>,
    components: Vec<Vec<f64>>,
    explained_variance: Vec<f64>,
    #[serde(default)]
    total_variance: Option<f64>,
}

impl FeaturePipeline {
    pub fn fit(raw: &Matrix, k: usize) -> Result<Self, FeatureError> {
        let standardizer = Standardizer::fit(raw)?;
        let pca = PcaModel::fit(&standardizer.transform_matrix(raw)?, k)?;
        Ok(Self { standardizer, pca })
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, FeatureError> {
        self.pca.project(&self.standardizer.transform(x)?)
    }

    pub fn input_dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.pca.k()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(PipelineFile {
            means: self.standardizer.means.clone(),
            stds: self.standardizer.stds.clone(),
            components: self.pca.components.to_rows(),
            explained_variance: self.pca.explained_variance.clone(),
            total_variance: Some(self.pca.total_variance),
        })
        .expect("pipeline serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self, serde_json::Error> {
        use serde::de::Error as _;
        let file: PipelineFile = serde_json::from_value(value)?;
        let components = Matrix::from_rows(&file.components)
            .ok_or_else(|| serde_json::Error::custom("ragged components"))?;
        if file.means.len() != file.stds.len() || components.cols() != file.means.len() {
            return Err(serde_json::Error::custom("inconsistent pipeline dimensions"));
        }
        let total_variance = file.total_variance.unwrap_or_else(|| file.explained_variance.iter().sum());
        Ok(Self {
            standardizer: Standardizer { means: file.means, stds: file.stds },
            pca: PcaModel { components, explained_variance: file.explained_variance, total_variance },
        })
    }
}

fn covariance(data: &Matrix) -> Matrix {
    let (n, d) = (data.rows(), data.cols());
    let mut means = vec![0.0; d];
    for row in data.iter_rows() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = Matrix::zeros(d, d);
    let mut centred = vec![0.0; d];
    for row in data.iter_rows() {
        for ((c, v), m) in centred.iter_mut().zip(row).zip(&means) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centred[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                cov[(i, j)] += ci * centred[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues (unsorted) and a matrix whose columns are the
/// corresponding unit eigenvectors.
pub fn jacobi_eigen(sym: &Matrix) -> (Vec<f64>, Matrix) {
    let n = sym.rows();
    let mut a = sym.clone();
    let mut v = Matrix::identity(n);
    let scale: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn standardizer_hand_arithmetic() {
        let data = Matrix::from_rows(&[[2.0, 5.0], [4.0, 5.0], [6.0, 5.0]]).unwrap();
        let s = Standardizer::fit(&data).unwrap();
        assert!((s.means[0] - 4.0).abs() < 1e-12);
        assert!((s.stds[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.stds[0] - 1.63299).abs() < 1e-5);
        assert_eq!(s.means[1], 5.0);
        assert_eq!(s.stds[1], 0.0);
        assert_eq!(s.constant_columns(), vec![1]);
        assert_eq!(s.transform(&[9.0, 123.0]).unwrap()[1], 0.0);
    }

    #[test]
    fn standardized_columns_are_centred() {
        let data = random_matrix(40, 5, 11);
        let s = Standardizer::fit(&data).unwrap();
        let z = s.transform_matrix(&data).unwrap();
        for c in 0..5 {
            let mean: f64 = (0..40).map(|r| z[(r, c)]).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn standardizer_needs_two_rows() {
        let data = Matrix::from_rows(&[[1.0]]).unwrap();
        assert_eq!(Standardizer::fit(&data), Err(FeatureError::InsufficientData { needed: 2, got: 1 }));
    }

    #[test]
    fn rank_one_data_recovers_direction() {
        let rows: Vec<[f64; 2]> = (-2..=2).map(|t| [t as f64, 2.0 * t as f64]).collect();
        let model = PcaModel::fit(&Matrix::from_rows(&rows).unwrap(), 1).unwrap();
        let c = model.components.row(0);
        let s5 = 5f64.sqrt();
        assert!((c[0] - 1.0 / s5).abs() < 1e-12);
        assert!((c[1] - 2.0 / s5).abs() < 1e-12);
        assert!((model.coverage() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_rank_projection_round_trips() {
        let data = random_matrix(30, 6, 5);
        let model = PcaModel::fit(&data, 6).unwrap();
        for row in data.iter_rows() {
            let back = model.reconstruct(&model.project(row).unwrap()).unwrap();
            for (a, b) in back.iter().zip(row) {
                assert!((a - b).abs() < 1e-8);
            }
        }
        let trace = covariance(&data);
        let trace: f64 = (0..6).map(|i| trace[(i, i)]).sum();
        assert!((model.explained_variance.iter().sum::<f64>() - trace).abs() < 1e-8);
    }

    /// Power iteration with Hotelling deflation; independent of the Jacobi path.
    fn power_iteration_eigen(cov: &Matrix, k: usize) -> Vec<(f64, Vec<f64>)> {
        let n = cov.rows();
        let mut m = cov.clone();
        let mut out = Vec::new();
        for comp in 0..k {
            let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7 + comp * 3) % 5) as f64).collect();
            let mut lambda = 0.0;
            for _ in 0..20_000 {
                let w = m.matvec(&v);
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
                let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
                v = next;
                lambda = norm;
                if delta < 1e-15 {
                    break;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] -= lambda * v[i] * v[j];
                }
            }
            out.push((lambda, v));
        }
        out
    }

    #[test]
    fn components_match_power_iteration_oracle() {
        let data = random_matrix(6, 4, 42);
        let model = PcaModel::fit(&data, 4).unwrap();
        let oracle = power_iteration_eigen(&covariance(&data), 4);
        for (i, (lambda, v)) in oracle.iter().enumerate() {
            assert!((model.explained_variance[i] - lambda).abs() < 1e-6, "eigenvalue {i}");
            let c = model.components.row(i);
            let same: f64 = c.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let flipped: f64 = c.iter().zip(v).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
            assert!(same.min(flipped) < 1e-6, "component {i} differs from oracle");
        }
    }

    #[test]
    fn projection_matches_naive_dot_products() {
        let data = random_matrix(50, 8, 3);
        let model = PcaModel::fit(&data, 3).unwrap();
        let x = [0.3, -0.2, 0.9, 0.1, 0.0, -0.7, 0.5, 0.25];
        let z = model.project(&x).unwrap();
        for (r, zr) in z.iter().enumerate() {
            let mut acc = 0.0;
            for j in 0..8 {
                acc += model.components[(r, j)] * x[j];
            }
            assert!((acc - zr).abs() < 1e-14);
        }
        assert_eq!(model.project(&[0.0; 8]).unwrap(), vec![0.0; 3]);
        let first = model.components.row(0).to_vec();
        let e = model.project(&first).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-10 && e[1].abs() < 1e-10 && e[2].abs() < 1e-10);
        assert!(matches!(model.project(&[1.0]), Err(FeatureError::DimensionMismatch { .. })));
    }

    #[test]
    fn bad_component_counts() {
        let data = random_matrix(5, 8, 1);
        assert!(PcaModel::fit(&data, 0).is_err());
        assert!(PcaModel::fit(&data, 5).is_err());
        assert!(PcaModel::fit(&data, 4).is_ok());
    }

    #[test]
    fn constant_columns_flag_rank_deficiency() {
        let mut data = random_matrix(20, 3, 8);
        for r in 0..20 {
            data[(r, 2)] = 1.5;
        }
        let model = PcaModel::fit(&data, 3).unwrap();
        assert!(model.is_rank_deficient());
    }

    #[test]
    fn pipeline_json_round_trip() {
        let raw = random_matrix(30, 6, 77);
        let p = FeaturePipeline::fit(&raw, 3).unwrap();
        let json = p.to_json();
        for key in ["means", "stds", "components", "explained_variance"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        let back = FeaturePipeline::from_json(json).unwrap();
        assert_eq!(back, p);
    }
}
