//! Oracles and fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use eegspeech_core::pipeline::RunConfig;
use ndarray::{Array2, Axis};

pub fn sine(freq: f64, amp: f64, fs: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin()).collect()
}

/// Amplitude of the `freq` component of `x` by least-squares fit of a sine
/// and cosine pair.
pub fn tone_amplitude(x: &[f64], freq: f64, fs: f64) -> f64 {
    let (mut ss, mut cc, mut sc, mut xs, mut xc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let w = 2.0 * PI * freq * i as f64 / fs;
        let (s, c) = w.sin_cos();
        ss += s * s;
        cc += c * c;
        sc += s * c;
        xs += v * s;
        xc += v * c;
    }
    let det = ss * cc - sc * sc;
    let a = (xs * cc - xc * sc) / det;
    let b = (xc * ss - xs * sc) / det;
    a.hypot(b)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix, eigenvalues in
/// descending order with matching eigenvector columns.
pub fn jacobi_eigen(m: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = Array2::<f64>::eye(n);
    let total: f64 = a.iter().map(|x| x * x).sum();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[[i, j]] * a[[i, j]];
                }
            }
        }
        if off < 1e-24 * total {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[[y, y]].total_cmp(&a[[x, x]]));
    (order.iter().map(|&i| a[[i, i]]).collect(), v.select(Axis(1), &order))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// `(x·y + coef0)^degree` Gram matrix, double-centred with explicit
/// `H K H` products.
pub fn centred_poly_kernel(x: &Array2<f64>, gamma: f64, coef0: f64, degree: i32) -> Array2<f64> {
    let n = x.nrows();
    let k = x.dot(&x.t()).mapv(|v| (gamma * v + coef0).powi(degree));
    let h = Array2::<f64>::eye(n) - Array2::from_elem((n, n), 1.0 / n as f64);
    h.dot(&k).dot(&h)
}

/// A small but complete configuration for pipeline runs in tests.
pub fn small_config(out: &Path, n_trials: usize, synth_epochs: usize, regress_epochs: usize) -> RunConfig {
    let text = format!(
        "[run]\nseed = 11\nout_dir = {out:?}\n\
         [data]\nn_trials = {n_trials}\n\
         [synthesis]\nfilters1 = 8\nfilters2 = 4\nepochs = {synth_epochs}\n\
         [regression]\nhidden = 8\nepochs = {regress_epochs}\n",
        out = out.display().to_string()
    );
    RunConfig::from_toml_str(&text).expect("valid test config")
}

/// Every regular file under `dir`, relative path and contents, sorted.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).expect("under root").display().to_string();
                out.push((rel, std::fs::read(&path).expect("readable file")));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// Metrics JSON with the wall-clock timestamps removed.
pub fn metrics_without_timestamps(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).expect("metrics file")).expect("json");
    if let Some(meta) = v.get_mut("metadata").and_then(|m| m.as_object_mut()) {
        meta.remove("timestamps");
    }
    v
}
