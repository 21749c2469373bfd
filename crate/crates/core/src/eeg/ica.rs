//! Symmetric FastICA with the log-cosh contrast.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{excess_kurtosis, EegError};
use crate::linalg::symmetric_eigen;
use crate::seed::{stage_rng, Stage};

/// Whitening keeps directions whose covariance eigenvalue exceeds this
/// fraction of the largest one.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct IcaResult {
    /// Per-channel means removed before whitening.
    pub mean: Array1<f64>,
    /// `k × channels`: maps centred data to whitened coordinates.
    pub whitening: Array2<f64>,
    /// `channels × k`: pseudo-inverse of `whitening`.
    pub dewhitening: Array2<f64>,
    /// `k × k` orthogonal unmixing in whitened space.
    pub unmixing: Array2<f64>,
    /// `k × k`, the transpose (= inverse) of `unmixing`.
    pub mixing: Array2<f64>,
    /// `k × samples` estimated sources.
    pub components: Array2<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl IcaResult {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    /// Whitened input `Z` (`k × samples`), i.e. `mixing · components`.
    pub fn whitened(&self) -> Array2<f64> {
        self.mixing.dot(&self.components)
    }
}

/// Estimates `n_components` independent sources from `channels × samples`
/// data. If the iteration budget runs out, the iterate with the smallest
/// update is returned with `converged = false`.
pub fn fast_ica(
    data: &Array2<f64>,
    n_components: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<IcaResult, EegError> {
    let (channels, samples) = data.dim();
    if n_components == 0 || n_components > channels {
        return Err(EegError::InvalidIca(format!(
            "n_components must be in 1..={channels}, got {n_components}"
        )));
    }
    if samples < 2 {
        return Err(EegError::InvalidIca("need at least two samples".into()));
    }
    if !(tol > 0.0) {
        return Err(EegError::InvalidIca("tolerance must be positive".into()));
    }
    let mean = data.mean_axis(Axis(1)).expect("non-empty");
    let centred = data - &mean.view().insert_axis(Axis(1));
    let cov = centred.dot(&centred.t()) / samples as f64;
    let (vals, vecs) = symmetric_eigen(&cov);
    let top = vals.iter().copied().fold(0.0f64, f64::max);
    let k = vals
        .iter()
        .take(n_components)
        .filter(|&&v| top > 0.0 && v > RANK_TOL * top)
        .count();

    let mut whitening = Array2::zeros((k, channels));
    let mut dewhitening = Array2::zeros((channels, k));
    for i in 0..k {
        let s = vals[i].sqrt();
        for c in 0..channels {
            whitening[[i, c]] = vecs[[c, i]] / s;
            dewhitening[[c, i]] = vecs[[c, i]] * s;
        }
    }
    let z = whitening.dot(&centred);
    if k == 0 {
        return Ok(IcaResult {
            mean,
            whitening,
            dewhitening,
            unmixing: Array2::zeros((0, 0)),
            mixing: Array2::zeros((0, 0)),
            components: Array2::zeros((0, samples)),
            converged: true,
            iterations: 0,
        });
    }

    let mut rng = stage_rng(seed, Stage::Ica, "fastica");
    let init = Array2::from_shape_fn((k, k), |_| rng.sample::<f64, _>(StandardNormal));
    let mut w = symmetric_decorrelation(&init);
    let mut best = (f64::INFINITY, w.clone());
    let mut converged = false;
    let mut iterations = 0;
    let n = samples as f64;
    for it in 1..=max_iter {
        iterations = it;
        let wx = w.dot(&z);
        let g = wx.mapv(f64::tanh);
        let g_prime_mean: Array1<f64> = g.map_axis(Axis(1), |r| r.iter().map(|t| 1.0 - t * t).sum::<f64>() / n);
        let mut w_new = g.dot(&z.t()) / n;
        for i in 0..k {
            for j in 0..k {
                w_new[[i, j]] -= g_prime_mean[i] * w[[i, j]];
            }
        }
        let w_new = symmetric_decorrelation(&w_new);
        // largest deviation of |cos(angle)| between old and new rows from 1
        let change = (0..k)
            .map(|i| {
                let d: f64 = w_new.row(i).dot(&w.row(i));
                (d.abs() - 1.0).abs()
            })
            .fold(0.0, f64::max);
        w = w_new;
        if change < best.0 {
            best = (change, w.clone());
        }
        if change < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        w = best.1;
    }
    let components = w.dot(&z);
    Ok(IcaResult {
        mean,
        whitening,
        dewhitening,
        mixing: w.t().to_owned(),
        unmixing: w,
        components,
        converged,
        iterations,
    })
}

/// `W ← (W Wᵀ)^(-1/2) W`.
fn symmetric_decorrelation(w: &Array2<f64>) -> Array2<f64> {
    let (vals, vecs) = symmetric_eigen(&w.dot(&w.t()));
    let inv_sqrt = vals.mapv(|v| 1.0 / v.max(1e-300).sqrt());
    let m = vecs.dot(&Array2::from_diag(&inv_sqrt)).dot(&vecs.t());
    m.dot(w)
}

/// Result of dropping high-kurtosis components.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactRemoval {
    /// `channels × samples`, the input minus the removed sources.
    pub cleaned: Array2<f64>,
    pub removed: Vec<usize>,
    /// Excess kurtosis of every component.
    pub kurtosis: Vec<f64>,
    /// Whitened-space contribution of the retained / removed sources.
    pub retained_whitened: Array2<f64>,
    pub removed_whitened: Array2<f64>,
}

/// Zeroes every component with `|excess kurtosis| > threshold` by
/// subtracting its channel-space projection from `data` (the matrix the
/// decomposition was fitted on). Directions discarded by whitening are left
/// untouched.
pub fn remove_artifact_components(data: &Array2<f64>, ica: &IcaResult, threshold: f64) -> ArtifactRemoval {
    let k = ica.n_components();
    let samples = ica.components.ncols();
    let kurtosis: Vec<f64> = ica
        .components
        .rows()
        .into_iter()
        .map(|r| excess_kurtosis(&r.to_vec()))
        .collect();
    let removed: Vec<usize> = (0..k).filter(|&i| kurtosis[i].abs() > threshold).collect();

    let mut removed_sources = Array2::zeros((k, samples));
    for &i in &removed {
        removed_sources.row_mut(i).assign(&ica.components.row(i));
    }
    let removed_whitened = ica.mixing.dot(&removed_sources);
    let retained_whitened = ica.mixing.dot(&(&ica.components - &removed_sources));

    let artifact = ica.dewhitening.dot(&removed_whitened);
    let cleaned = data - &artifact;
    ArtifactRemoval {
        cleaned,
        removed,
        kurtosis,
        retained_whitened,
        removed_whitened,
    }
}
