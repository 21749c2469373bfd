//! Onset strength and the autocorrelation tempogram.

use std::f64::consts::PI;

use ndarray::Array2;

use super::{mel_spectrogram, Analysis};

pub const TEMPOGRAM_WINDOW: usize = 384;
const DB_FLOOR: f64 = 1e-10;

/// Mean over mel bands of the half-wave-rectified frame-to-frame increase
/// in log-mel power (dB). The first frame has zero strength.
pub fn onset_strength(a: &Analysis) -> Vec<f64> {
    let mel = mel_spectrogram(a).mapv(|v| 10.0 * (v + DB_FLOOR).log10());
    let bands = mel.ncols() as f64;
    let mut env = vec![0.0; mel.nrows()];
    for m in 1..mel.nrows() {
        env[m] = mel
            .row(m)
            .iter()
            .zip(mel.row(m - 1).iter())
            .map(|(c, p)| (c - p).max(0.0))
            .sum::<f64>()
            / bands;
    }
    env
}

/// Local autocorrelation of the onset envelope: for each frame, a
/// 384-frame Hann-weighted window centred on it (zero beyond the clip),
/// autocorrelated for lags 0..384 and scaled so lag 0 equals 1. Frames
/// whose window holds no onset energy are zero.
pub fn tempogram(a: &Analysis) -> Array2<f64> {
    let env = onset_strength(a);
    let frames = env.len();
    let w = TEMPOGRAM_WINDOW;
    let win: Vec<f64> = (0..w).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / w as f64).cos()).collect();
    let half = (w / 2) as isize;
    let mut out = Array2::zeros((frames, w));
    let mut seg = vec![0.0; w];
    for m in 0..frames {
        for (i, s) in seg.iter_mut().enumerate() {
            let src = m as isize + i as isize - half;
            *s = if src >= 0 && (src as usize) < frames {
                env[src as usize] * win[i]
            } else {
                0.0
            };
        }
        let r0: f64 = seg.iter().map(|v| v * v).sum();
        if r0 <= 0.0 {
            continue;
        }
        for lag in 0..w {
            let r: f64 = seg[..w - lag].iter().zip(&seg[lag..]).map(|(x, y)| x * y).sum();
            out[[m, lag]] = r / r0;
        }
    }
    out
}
