//! Rational-rate polyphase resampling with a Kaiser-windowed sinc
//! anti-aliasing filter.

use std::f64::consts::PI;

use super::DspError;

const KAISER_BETA: f64 = 5.0;
const HALF_LEN_FACTOR: usize = 10;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Low-pass prototype at the upsampled rate: cutoff at `1/max(up, down)` of
/// Nyquist, gain `up` so the interpolated signal keeps its amplitude.
fn design_kernel(up: usize, down: usize) -> Vec<f64> {
    let max_rate = up.max(down);
    let half_len = HALF_LEN_FACTOR * max_rate;
    let n_taps = 2 * half_len + 1;
    let cutoff = 1.0 / max_rate as f64;
    let denom = bessel_i0(KAISER_BETA);
    let mut h: Vec<f64> = (0..n_taps)
        .map(|i| {
            let m = i as f64 - half_len as f64;
            let ratio = m / half_len as f64;
            let w = bessel_i0(KAISER_BETA * (1.0 - ratio * ratio).max(0.0).sqrt()) / denom;
            cutoff * sinc(cutoff * m) * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    for v in &mut h {
        *v *= up as f64 / sum;
    }
    h
}

/// Resamples `signal` from `from_hz` to `to_hz`. Output length is
/// `round(len * to / from)`; the filter delay is compensated so output
/// sample `m` aligns with input time `m / to_hz`.
pub fn resample_poly(signal: &[f64], from_hz: u32, to_hz: u32) -> Result<Vec<f64>, DspError> {
    if from_hz == 0 || to_hz == 0 {
        return Err(DspError::InvalidRate(format!(
            "sample rates must be positive, got {from_hz} -> {to_hz}"
        )));
    }
    let g = gcd(from_hz as u64, to_hz as u64);
    let up = (to_hz as u64 / g) as usize;
    let down = (from_hz as u64 / g) as usize;
    let n_in = signal.len();
    let n_out = ((n_in as u128 * up as u128 * 2 + down as u128) / (2 * down as u128)) as usize;
    if up == 1 && down == 1 {
        return Ok(signal.to_vec());
    }
    let h = design_kernel(up, down);
    let half_len = (h.len() - 1) / 2;

    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out {
        // position on the upsampled grid, shifted by the filter's group delay
        let n = m * down + half_len;
        // contributing inputs j satisfy 0 <= n - j*up < h.len()
        let j_max = n / up;
        let j_min = (n + 1).saturating_sub(h.len()).div_ceil(up);
        let mut acc = 0.0;
        for j in j_min..=j_max.min(n_in.saturating_sub(1)) {
            acc += signal[j] * h[n - j * up];
        }
        out.push(acc);
    }
    Ok(out)
}
