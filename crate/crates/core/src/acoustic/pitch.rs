//! Autocorrelation pitch tracking.

use ndarray::Array2;

use super::Analysis;

const ENERGY_FLOOR: f64 = 1e-12;
/// Candidate peaks within this fraction of the best one are preferred when
/// they sit at a shorter lag, which avoids picking period multiples.
const OCTAVE_TOLERANCE: f64 = 0.9;

/// Normalized autocorrelation `r(τ) = Σ x_n x_{n+τ} / sqrt(Σ x_n² Σ x_{n+τ}²)`
/// over the overlapping part of the frame.
fn normalized_acf(x: &[f64], lag: usize) -> f64 {
    let a = &x[..x.len() - lag];
    let b = &x[lag..];
    let num: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
    let ea: f64 = a.iter().map(|v| v * v).sum();
    let eb: f64 = b.iter().map(|v| v * v).sum();
    if ea <= ENERGY_FLOOR || eb <= ENERGY_FLOOR {
        0.0
    } else {
        num / (ea * eb).sqrt()
    }
}

/// Fundamental frequency of one frame in `[fmin, fmax]`, or 0 when the
/// best normalized autocorrelation peak is below `clarity`.
pub fn frame_pitch(frame: &[f64], fs: f64, fmin: f64, fmax: f64, clarity: f64) -> f64 {
    let mean = frame.iter().sum::<f64>() / frame.len() as f64;
    let x: Vec<f64> = frame.iter().map(|v| v - mean).collect();
    if x.iter().map(|v| v * v).sum::<f64>() <= ENERGY_FLOOR {
        return 0.0;
    }
    let lag_lo = (fs / fmax).floor().max(1.0) as usize;
    let lag_hi = ((fs / fmin).ceil() as usize).min(x.len() - 2);
    if lag_hi <= lag_lo + 1 {
        return 0.0;
    }
    // one extra lag on each side so boundary peaks can be interpolated
    let r: Vec<f64> = (lag_lo - 1..=lag_hi + 1).map(|l| normalized_acf(&x, l)).collect();
    let at = |lag: usize| r[lag + 1 - lag_lo];
    let peaks: Vec<usize> = (lag_lo..=lag_hi)
        .filter(|&l| at(l) >= at(l - 1) && at(l) >= at(l + 1))
        .collect();
    let Some(&best) = peaks.iter().max_by(|&&a, &&b| at(a).total_cmp(&at(b))) else {
        return 0.0;
    };
    if at(best) < clarity {
        return 0.0;
    }
    let chosen = peaks
        .iter()
        .copied()
        .find(|&l| at(l) >= OCTAVE_TOLERANCE * at(best))
        .unwrap_or(best);
    let (y0, y1, y2) = (at(chosen - 1), at(chosen), at(chosen + 1));
    let denom = y0 - 2.0 * y1 + y2;
    let shift = if denom.abs() > 1e-15 {
        (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    fs / (chosen as f64 + shift)
}

pub fn pitch_track(a: &Analysis) -> Array2<f64> {
    let p = &a.params;
    let fs = a.sample_rate_hz() as f64;
    let vals: Vec<f64> = a
        .frames
        .iter()
        .map(|f| frame_pitch(f, fs, p.pitch_min_hz, p.pitch_max_hz, p.voicing_threshold))
        .collect();
    Array2::from_shape_vec((vals.len(), 1), vals).expect("column")
}
