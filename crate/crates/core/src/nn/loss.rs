//! Masked mean squared error.

use ndarray::{s, Array3};

use super::NnError;

/// Mean of squared differences over the valid entries and its gradient
/// `2(pred − target)/count` (zero on padding). `lengths[i]` is the number
/// of valid time steps of sequence `i`; `None` means all steps are valid.
pub fn mse_loss(
    pred: &Array3<f64>,
    target: &Array3<f64>,
    lengths: Option<&[usize]>,
) -> Result<(f64, Array3<f64>), NnError> {
    if pred.dim() != target.dim() {
        return Err(NnError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let (b, t, f) = pred.dim();
    let full = vec![t; b];
    let lengths = lengths.unwrap_or(&full);
    if lengths.len() != b || lengths.iter().any(|&l| l > t) {
        return Err(NnError::Shape(format!("lengths {lengths:?} do not fit batch {b} × time {t}")));
    }
    let count = lengths.iter().sum::<usize>() * f;
    if count == 0 {
        return Err(NnError::EmptyMask);
    }
    let mut grad = Array3::zeros((b, t, f));
    let mut sum = 0.0;
    for (i, &len) in lengths.iter().enumerate() {
        let d = &pred.slice(s![i, ..len, ..]) - &target.slice(s![i, ..len, ..]);
        sum += d.iter().map(|v| v * v).sum::<f64>();
        grad.slice_mut(s![i, ..len, ..]).assign(&(d * (2.0 / count as f64)));
    }
    Ok((sum / count as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn arithmetic() {
        let p = array![[[1.0], [2.0]]];
        let y = array![[[0.0], [2.0]]];
        let (l, g) = mse_loss(&p, &y, None).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g, array![[[1.0], [0.0]]]);
        assert_eq!(mse_loss(&p, &p, None).unwrap().0, 0.0);
    }

    #[test]
    fn mask_ignores_padding() {
        let p = array![[[1.0], [100.0]], [[3.0], [1.0]]];
        let y = array![[[0.0], [0.0]], [[1.0], [1.0]]];
        let (l, g) = mse_loss(&p, &y, Some(&[1, 2])).unwrap();
        assert!((l - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(g[[0, 1, 0]], 0.0);
        assert!(matches!(mse_loss(&p, &y, Some(&[0, 0])), Err(NnError::EmptyMask)));
        assert!(mse_loss(&p, &y, Some(&[3, 0])).is_err());
        assert!(mse_loss(&p, &Array3::zeros((2, 2, 2)), None).is_err());
    }

    #[test]
    fn gradient_matches_differences() {
        let p = array![[[0.3, -1.2], [0.7, 2.0]], [[1.1, 0.0], [-0.4, 0.9]]];
        let y = array![[[0.1, 0.2], [0.3, 0.4]], [[0.5, 0.6], [0.7, 0.8]]];
        let lens = [2, 1];
        let (_, g) = mse_loss(&p, &y, Some(&lens)).unwrap();
        let eps = 1e-5;
        for idx in ndarray::indices(p.dim()) {
            let mut a = p.clone();
            let mut b = p.clone();
            a[idx] += eps;
            b[idx] -= eps;
            let n = (mse_loss(&a, &y, Some(&lens)).unwrap().0 - mse_loss(&b, &y, Some(&lens)).unwrap().0) / (2.0 * eps);
            let rel = (n - g[idx]).abs() / n.abs().max(g[idx].abs()).max(1e-6);
            assert!(rel < 1e-8, "{idx:?}: {n} vs {}", g[idx]);
        }
    }
}
