//! Kernel PCA with a polynomial kernel.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::EegError;
use crate::linalg::symmetric_eigen;
use crate::seed::{stage_rng, Stage};

pub const KPCA_OUT_DIM: usize = 30;
const MODEL_VERSION: u32 = 1;
/// Eigenvalues below this fraction of the largest (or, for the leading one,
/// of the largest kernel entry) count as zero.
const EIGEN_REL_TOL: f64 = 1e-10;

/// `k(x, y) = (gamma · x·y + coef0)^degree`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub degree: u32,
    pub gamma: f64,
    pub coef0: f64,
}

impl KernelParams {
    /// Degree 3, `gamma = 1 / dim`, `coef0 = 1`.
    pub fn polynomial_default(dim: usize) -> Self {
        KernelParams {
            degree: 3,
            gamma: 1.0 / dim.max(1) as f64,
            coef0: 1.0,
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        (self.gamma * dot + self.coef0).powi(self.degree as i32)
    }

    /// Gram matrix between the rows of `a` and the rows of `b`.
    pub fn gram(&self, a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let deg = self.degree as i32;
        a.dot(&b.t()).mapv(|d| (self.gamma * d + self.coef0).powi(deg))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpcaModel {
    pub version: u32,
    pub kernel: KernelParams,
    /// `n × d` training vectors.
    pub train: Array2<f64>,
    /// `n × out_dim`; eigenvectors scaled by `1/sqrt(eigenvalue)`, zero
    /// columns for components beyond `effective_dim`.
    pub alphas: Array2<f64>,
    /// Top `out_dim` eigenvalues of the centred kernel, non-increasing, ≥ 0.
    pub eigenvalues: Array1<f64>,
    /// Sum of all positive eigenvalues of the centred kernel.
    pub total_eigen_mass: f64,
    /// Column means of the uncentred training kernel.
    pub kernel_col_means: Array1<f64>,
    /// Grand mean of the uncentred training kernel.
    pub kernel_mean: f64,
    /// Number of components with a positive eigenvalue.
    pub effective_dim: usize,
}

impl KpcaModel {
    pub fn input_dim(&self) -> usize {
        self.train.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.alphas.ncols()
    }

    pub fn save_json(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }

    pub fn load_json(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let model: KpcaModel = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        if model.version != MODEL_VERSION {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("unsupported KPCA model version {}", model.version),
            ));
        }
        Ok(model)
    }
}

/// Double-centres a square kernel matrix: `K - 1K - K1 + 1K1`.
fn centre_kernel(k: &Array2<f64>) -> (Array2<f64>, Array1<f64>, f64) {
    let col_means = k.mean_axis(Axis(0)).expect("non-empty");
    let row_means = k.mean_axis(Axis(1)).expect("non-empty");
    let grand = col_means.mean().expect("non-empty");
    let mut kc = k.clone();
    for ((i, j), v) in kc.indexed_iter_mut() {
        *v = *v - row_means[i] - col_means[j] + grand;
    }
    (kc, col_means, grand)
}

pub fn kpca_fit(train: &Array2<f64>, out_dim: usize, kernel: KernelParams) -> Result<KpcaModel, EegError> {
    let n = train.nrows();
    if out_dim == 0 {
        return Err(EegError::InvalidKernel("out_dim must be positive".into()));
    }
    if kernel.degree == 0 || !kernel.gamma.is_finite() || !kernel.coef0.is_finite() {
        return Err(EegError::InvalidKernel(format!("{kernel:?}")));
    }
    if n < out_dim + 1 {
        return Err(EegError::TooFewRows {
            needed: out_dim + 1,
            got: n,
        });
    }
    let k = kernel.gram(train, train);
    let (kc, kernel_col_means, kernel_mean) = centre_kernel(&k);
    let (vals, vecs) = symmetric_eigen(&kc);
    let top = vals[0].max(0.0);
    let scale = k.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !top.is_finite() || top <= EIGEN_REL_TOL * scale {
        return Err(EegError::RankDeficient);
    }
    let positive = |v: f64| v > EIGEN_REL_TOL * top;
    let total_eigen_mass: f64 = vals.iter().copied().filter(|&v| positive(v)).sum();
    let effective_dim = vals.iter().take(out_dim).filter(|&&v| positive(v)).count();
    if effective_dim < out_dim {
        log::warn!("KPCA training data supports only {effective_dim} of {out_dim} components");
    }
    let mut alphas = Array2::zeros((n, out_dim));
    let mut eigenvalues = Array1::zeros(out_dim);
    for c in 0..effective_dim {
        eigenvalues[c] = vals[c];
        let scale = 1.0 / vals[c].sqrt();
        for r in 0..n {
            alphas[[r, c]] = vecs[[r, c]] * scale;
        }
    }
    Ok(KpcaModel {
        version: MODEL_VERSION,
        kernel,
        train: train.to_owned(),
        alphas,
        eigenvalues,
        total_eigen_mass,
        kernel_col_means,
        kernel_mean,
        effective_dim,
    })
}

/// Projects `m × d` rows onto the fitted components.
pub fn kpca_transform(model: &KpcaModel, features: &Array2<f64>) -> Result<Array2<f64>, EegError> {
    if features.ncols() != model.input_dim() {
        return Err(EegError::DimensionMismatch {
            expected: model.input_dim(),
            got: features.ncols(),
        });
    }
    let mut kx = model.kernel.gram(features, &model.train);
    let n = model.train.nrows() as f64;
    for mut row in kx.rows_mut() {
        let row_mean = row.sum() / n;
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v - row_mean - model.kernel_col_means[j] + model.kernel_mean;
        }
    }
    Ok(kx.dot(&model.alphas))
}

/// Cumulative fraction of the centred-kernel eigenvalue mass captured by
/// the first 1..=out_dim components.
pub fn explained_variance_curve(model: &KpcaModel) -> Vec<f64> {
    let mut acc = 0.0;
    model
        .eigenvalues
        .iter()
        .map(|&v| {
            acc += v.max(0.0);
            (acc / model.total_eigen_mass).min(1.0)
        })
        .collect()
}

/// Up to `cap` rows drawn without replacement, kept in original order.
pub fn subsample_rows(x: &Array2<f64>, cap: usize, seed: u64) -> Array2<f64> {
    if x.nrows() <= cap {
        return x.to_owned();
    }
    let mut rng = stage_rng(seed, Stage::KpcaSubsample, "rows");
    let mut picked = index::sample(&mut rng, x.nrows(), cap).into_vec();
    picked.sort_unstable();
    x.select(Axis(0), &picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Cyclic Jacobi eigensolver: an independent dense oracle.
    fn jacobi_eigen(m: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
        let n = m.nrows();
        let mut a = m.clone();
        let mut v = Array2::<f64>::eye(n);
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[[i, j]].powi(2))
                .sum();
            if off < 1e-22 * a.iter().map(|x| x * x).sum::<f64>() {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[[p, q]];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[[k, p]];
                        let akq = a[[k, q]];
                        a[[k, p]] = c * akp - s * akq;
                        a[[k, q]] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[[p, k]];
                        let aqk = a[[q, k]];
                        a[[p, k]] = c * apk - s * aqk;
                        a[[q, k]] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[[k, p]];
                        let vkq = v[[k, q]];
                        v[[k, p]] = c * vkp - s * vkq;
                        v[[k, q]] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| a[[y, y]].total_cmp(&a[[x, x]]));
        let vals = order.iter().map(|&i| a[[i, i]]).collect();
        let vecs = v.select(Axis(1), &order);
        (vals, vecs)
    }

    fn random_features(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal))
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn matches_jacobi_oracle() {
        let x = random_features(120, 155, 1);
        let kernel = KernelParams::polynomial_default(155);
        let model = kpca_fit(&x, KPCA_OUT_DIM, kernel).unwrap();
        assert_eq!(model.out_dim(), 30);
        let proj = kpca_transform(&model, &x).unwrap();

        // oracle: centre the kernel by explicit centring-matrix products
        let n = x.nrows();
        let mut k = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                k[[i, j]] = kernel.eval(&x.row(i).to_vec(), &x.row(j).to_vec());
            }
        }
        let h = Array2::<f64>::eye(n) - Array2::from_elem((n, n), 1.0 / n as f64);
        let kc = h.dot(&k).dot(&h);
        let (vals, vecs) = jacobi_eigen(&kc);
        for c in 0..30 {
            let rel = (model.eigenvalues[c] - vals[c]).abs() / vals[c];
            assert!(rel < 1e-8, "eigenvalue {c}: {} vs {}", model.eigenvalues[c], vals[c]);
            let cos = cosine(&proj.column(c).to_vec(), &vecs.column(c).to_vec());
            assert!(cos.abs() > 0.999, "component {c}: {cos}");
        }
    }

    #[test]
    fn transform_reproduces_training_projection() {
        let x = random_features(60, 12, 2);
        let model = kpca_fit(&x, 10, KernelParams::polynomial_default(12)).unwrap();
        let proj = kpca_transform(&model, &x).unwrap();
        // training projection is Kc·alpha = v·sqrt(lambda): unit-scaled columns
        for c in 0..10 {
            let norm2: f64 = proj.column(c).iter().map(|v| v * v).sum();
            assert!((norm2 - model.eigenvalues[c]).abs() < 1e-8 * model.eigenvalues[c]);
        }
        let twice = kpca_transform(&model, &x).unwrap();
        assert_eq!(proj, twice);
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let x = random_features(40, 6, 3);
        let model = kpca_fit(&x, 5, KernelParams::polynomial_default(6)).unwrap();
        let mut q = random_features(2, 6, 4);
        let r0 = q.row(0).to_owned();
        q.row_mut(1).assign(&r0);
        let out = kpca_transform(&model, &q).unwrap();
        assert_eq!(out.row(0), out.row(1));
        assert!(matches!(
            kpca_transform(&model, &random_features(2, 5, 0)),
            Err(EegError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn duplicated_points_rank_one() {
        let a = random_features(1, 8, 5);
        let b = random_features(1, 8, 6);
        let mut x = Array2::zeros((20, 8));
        for i in 0..20 {
            x.row_mut(i).assign(&if i % 2 == 0 { a.row(0) } else { b.row(0) });
        }
        let model = kpca_fit(&x, 5, KernelParams::polynomial_default(8)).unwrap();
        assert_eq!(model.effective_dim, 1);
        let nonzero = model.eigenvalues.iter().filter(|&&v| v > 1e-9 * model.eigenvalues[0]).count();
        assert!(nonzero <= 1);
        let curve = explained_variance_curve(&model);
        assert!((curve[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_rows_rejected() {
        let x = Array2::from_elem((10, 4), 0.3);
        assert!(matches!(
            kpca_fit(&x, 3, KernelParams::polynomial_default(4)),
            Err(EegError::RankDeficient)
        ));
        assert!(matches!(
            kpca_fit(&random_features(5, 4, 0), 5, KernelParams::polynomial_default(4)),
            Err(EegError::TooFewRows { .. })
        ));
    }

    #[test]
    fn explained_variance_monotone() {
        let x = random_features(80, 20, 7);
        let model = kpca_fit(&x, 30, KernelParams::polynomial_default(20)).unwrap();
        let curve = explained_variance_curve(&model);
        assert_eq!(curve.len(), 30);
        assert!(curve.windows(2).all(|w| w[1] >= w[0]));
        assert!(*curve.last().unwrap() <= 1.0);
        assert!(curve[0] > 0.0);
    }

    #[test]
    fn row_permutation_invariance() {
        let x = random_features(50, 10, 8);
        let model = kpca_fit(&x, 6, KernelParams::polynomial_default(10)).unwrap();
        let mut order: Vec<usize> = (0..50).collect();
        order.reverse();
        order.swap(3, 17);
        let xp = x.select(Axis(0), &order);
        let model_p = kpca_fit(&xp, 6, KernelParams::polynomial_default(10)).unwrap();
        let query = random_features(15, 10, 9);
        let a = kpca_transform(&model, &query).unwrap();
        let b = kpca_transform(&model_p, &query).unwrap();
        for c in 0..6 {
            let cos = cosine(&a.column(c).to_vec(), &b.column(c).to_vec());
            assert!(cos.abs() > 1.0 - 1e-8, "component {c}: {cos}");
        }
    }

    #[test]
    fn json_round_trip() {
        let x = random_features(20, 5, 10);
        let model = kpca_fit(&x, 4, KernelParams::polynomial_default(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kpca.json");
        model.save_json(&p).unwrap();
        let back = KpcaModel::load_json(&p).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn subsample_is_deterministic_and_ordered() {
        let x = Array2::from_shape_fn((100, 2), |(i, j)| (i * 2 + j) as f64);
        let a = subsample_rows(&x, 30, 1);
        let b = subsample_rows(&x, 30, 1);
        assert_eq!(a, b);
        assert_eq!(a.nrows(), 30);
        assert!(a.column(0).to_vec().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample_rows(&x, 200, 1), x);
    }
}
