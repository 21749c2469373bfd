use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

/// Standard deviations below this are treated as zero.
pub const STD_FLOOR: f64 = 1e-12;

/// Per-column affine normalization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits over the rows of every matrix in `parts` (all with equal width).
    pub fn fit<'a>(parts: impl IntoIterator<Item = &'a Array2<f64>>) -> Self {
        let mut sum: Option<Array1<f64>> = None;
        let mut sq: Option<Array1<f64>> = None;
        let mut count = 0usize;
        for p in parts {
            let s = p.sum_axis(Axis(0));
            let q = p.mapv(|v| v * v).sum_axis(Axis(0));
            sum = Some(match sum {
                Some(acc) => acc + s,
                None => s,
            });
            sq = Some(match sq {
                Some(acc) => acc + q,
                None => q,
            });
            count += p.nrows();
        }
        let (Some(sum), Some(sq)) = (sum, sq) else {
            return Standardizer {
                mean: vec![],
                std: vec![],
            };
        };
        let n = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt())
            .collect();
        Standardizer { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) / std`; columns with zero spread map to zero.
    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if self.std[j] < STD_FLOOR {
                    0.0
                } else {
                    (*v - self.mean[j]) / self.std[j]
                };
            }
        }
        out
    }

    pub fn inverse(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut out = z.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.mean[j] + *v * self.std[j];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn fit_transform_inverse() {
        let a = array![[1.0, 5.0], [3.0, 5.0]];
        let b = array![[5.0, 5.0]];
        let s = Standardizer::fit([&a, &b]);
        assert_eq!(s.mean, vec![3.0, 5.0]);
        assert!(s.std[1] < STD_FLOOR);
        let z = s.transform(&a);
        assert!((z[[0, 0]] + 1.224_744_871_391_589).abs() < 1e-12);
        assert_eq!(z[[0, 1]], 0.0);
        let back = s.inverse(&s.transform(&b));
        assert_eq!(back, b);
    }
}
