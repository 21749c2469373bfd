//! Spectrogram-derived features and frame-level scalars.

use ndarray::Array2;

use super::Analysis;
use crate::eeg::zero_crossing_rate;

const FLATNESS_FLOOR: f64 = 1e-10;
const CONTRAST_FLOOR: f64 = 1e-10;
const LOUDNESS_FLOOR: f64 = 1e-6;
pub const N_BANDS: usize = 12;
pub const N_MELS: usize = 128;
pub const N_CONTRAST_OCTAVES: usize = 6;

/// `N_BANDS + 1` geometrically spaced edges from `lo` to `hi`.
pub fn band_edges(lo_hz: f64, hi_hz: f64) -> Vec<f64> {
    let ratio = hi_hz / lo_hz;
    (0..=N_BANDS)
        .map(|i| lo_hz * ratio.powf(i as f64 / N_BANDS as f64))
        .collect()
}

/// Sum of STFT power over each of 12 log-spaced bands; a bin belongs to
/// the band whose half-open interval `[lo, hi)` holds its centre frequency
/// (the last band is closed).
pub fn band_power(a: &Analysis) -> Array2<f64> {
    let edges = band_edges(a.params.band_lo_hz, a.params.band_hi_hz);
    let freqs = a.spec.bin_freqs();
    let owner: Vec<Option<usize>> = freqs
        .iter()
        .map(|&f| {
            if f < edges[0] || f > edges[N_BANDS] {
                None
            } else {
                Some(edges[1..].iter().position(|&e| f < e).unwrap_or(N_BANDS - 1))
            }
        })
        .collect();
    let mut out = Array2::zeros((a.frame_count(), N_BANDS));
    for (m, row) in a.spec.power.rows().into_iter().enumerate() {
        for (k, &p) in row.iter().enumerate() {
            if let Some(b) = owner[k] {
                out[[m, b]] += p;
            }
        }
    }
    out
}

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `n_mels × bins` triangular filters with unit peaks, centres evenly
/// spaced on the mel axis between 0 and `fmax`. Adjacent triangles sum to
/// one between the first and last centre.
pub fn mel_filterbank(n_mels: usize, bin_freqs: &[f64], fmax_hz: f64) -> Array2<f64> {
    let top = hz_to_mel(fmax_hz);
    let nodes: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((n_mels, bin_freqs.len()));
    for m in 0..n_mels {
        let (l, c, r) = (nodes[m], nodes[m + 1], nodes[m + 2]);
        for (k, &f) in bin_freqs.iter().enumerate() {
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

pub fn mel_spectrogram(a: &Analysis) -> Array2<f64> {
    let fb = mel_filterbank(N_MELS, &a.spec.bin_freqs(), a.params.mel_fmax_hz);
    a.spec.power.dot(&fb.t())
}

fn per_frame(a: &Analysis, f: impl Fn(&[f64]) -> f64) -> Array2<f64> {
    let vals: Vec<f64> = a.frames.iter().map(|fr| f(fr)).collect();
    Array2::from_shape_vec((vals.len(), 1), vals).expect("column")
}

fn per_spectrum(a: &Analysis, f: impl Fn(&[f64], &[f64]) -> f64) -> Array2<f64> {
    let freqs = a.spec.bin_freqs();
    let vals: Vec<f64> = a
        .spec
        .power
        .rows()
        .into_iter()
        .map(|r| f(r.as_slice().expect("contiguous"), &freqs))
        .collect();
    Array2::from_shape_vec((vals.len(), 1), vals).expect("column")
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn frame_rms(a: &Analysis) -> Array2<f64> {
    per_frame(a, rms)
}

/// `20·log10(rms + 1e-6)` in dB relative to full scale.
pub fn loudness(a: &Analysis) -> Array2<f64> {
    per_frame(a, |x| 20.0 * (rms(x) + LOUDNESS_FLOOR).log10())
}

pub fn frame_zcr(a: &Analysis) -> Array2<f64> {
    per_frame(a, zero_crossing_rate)
}

fn centroid_of(p: &[f64], f: &[f64]) -> Option<f64> {
    let total: f64 = p.iter().sum();
    (total > 0.0).then(|| p.iter().zip(f).map(|(p, f)| p * f).sum::<f64>() / total)
}

pub fn spectral_centroid(a: &Analysis) -> Array2<f64> {
    per_spectrum(a, |p, f| centroid_of(p, f).unwrap_or(0.0))
}

pub fn spectral_bandwidth(a: &Analysis) -> Array2<f64> {
    per_spectrum(a, |p, f| match centroid_of(p, f) {
        Some(c) => {
            let total: f64 = p.iter().sum();
            (p.iter().zip(f).map(|(p, f)| (f - c).powi(2) * p).sum::<f64>() / total).sqrt()
        }
        None => 0.0,
    })
}

/// Geometric over arithmetic mean of the power, each bin floored at 1e-10.
pub fn spectral_flatness(a: &Analysis) -> Array2<f64> {
    per_spectrum(a, |p, _| {
        let n = p.len() as f64;
        let log_mean = p.iter().map(|v| v.max(FLATNESS_FLOOR).ln()).sum::<f64>() / n;
        let mean = p.iter().map(|v| v.max(FLATNESS_FLOOR)).sum::<f64>() / n;
        log_mean.exp() / mean
    })
}

/// Lowest bin frequency at which the cumulative power reaches the
/// configured fraction of the total; 0 for silent frames.
pub fn spectral_rolloff(a: &Analysis) -> Array2<f64> {
    let frac = a.params.rolloff_fraction;
    per_spectrum(a, |p, f| {
        let total: f64 = p.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for (pk, fk) in p.iter().zip(f) {
            acc += pk;
            if acc >= frac * total {
                return *fk;
            }
        }
        *f.last().expect("bins")
    })
}

/// Band boundaries for the contrast feature: `[0, low)`, then six octaves
/// `[low·2^i, low·2^(i+1))`, the last one extended to Nyquist.
fn contrast_bands(low_hz: f64, nyquist: f64) -> Vec<(f64, f64)> {
    let mut bands = vec![(0.0, low_hz)];
    for i in 0..N_CONTRAST_OCTAVES {
        let lo = low_hz * 2f64.powi(i as i32);
        let hi = if i + 1 == N_CONTRAST_OCTAVES {
            nyquist + 1.0
        } else {
            low_hz * 2f64.powi(i as i32 + 1)
        };
        bands.push((lo, hi));
    }
    bands
}

/// Per band: `ln(mean of top quantile) − ln(mean of bottom quantile)`.
pub fn spectral_contrast(a: &Analysis) -> Array2<f64> {
    let freqs = a.spec.bin_freqs();
    let nyq = a.sample_rate_hz() as f64 / 2.0;
    let bands = contrast_bands(a.params.contrast_low_hz, nyq);
    let members: Vec<Vec<usize>> = bands
        .iter()
        .map(|&(lo, hi)| (0..freqs.len()).filter(|&k| freqs[k] >= lo && freqs[k] < hi).collect())
        .collect();
    let q = a.params.contrast_quantile;
    let mut out = Array2::zeros((a.frame_count(), bands.len()));
    let mut buf = Vec::new();
    for (m, row) in a.spec.power.rows().into_iter().enumerate() {
        for (b, idx) in members.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            buf.clear();
            buf.extend(idx.iter().map(|&k| row[k]));
            buf.sort_by(f64::total_cmp);
            let take = ((q * buf.len() as f64).round() as usize).max(1);
            let bottom = buf[..take].iter().sum::<f64>() / take as f64;
            let top = buf[buf.len() - take..].iter().sum::<f64>() / take as f64;
            out[[m, b]] = (top + CONTRAST_FLOOR).ln() - (bottom + CONTRAST_FLOOR).ln();
        }
    }
    out
}

/// Least-squares line through `(f_k, p_k)`; returns `(slope, intercept)`.
/// Terms are accumulated in mirrored pairs so that a constant spectrum on a
/// uniform grid gives a slope of exactly zero.
pub(crate) fn line_fit(f: &[f64], p: &[f64]) -> (f64, f64) {
    let n = f.len();
    let nf = n as f64;
    let fm = f.iter().sum::<f64>() / nf;
    let pm = p.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let (di, dj) = (f[i] - fm, f[j] - fm);
        sxy += di * (p[i] - pm) + dj * (p[j] - pm);
        sxx += di * di + dj * dj;
    }
    if n % 2 == 1 {
        let d = f[n / 2] - fm;
        sxy += d * (p[n / 2] - pm);
        sxx += d * d;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, pm - slope * fm)
}

pub fn poly_coeffs(a: &Analysis) -> Array2<f64> {
    let freqs = a.spec.bin_freqs();
    let mut out = Array2::zeros((a.frame_count(), 2));
    for (m, row) in a.spec.power.rows().into_iter().enumerate() {
        let (s, c) = line_fit(&freqs, row.as_slice().expect("contiguous"));
        out[[m, 0]] = s;
        out[[m, 1]] = c;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{AcousticParams, Analysis};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn sine(f: f64, amp: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * f * i as f64 / 15000.0).sin()).collect()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn interior(a: &Analysis) -> std::ops::Range<usize> {
        3..a.frame_count() - 3
    }

    #[test]
    fn silence_is_zero() {
        let x = vec![0.0; 6000];
        let a = Analysis::new(&x, 15000, &AcousticParams::default()).unwrap();
        assert!(band_power(&a).iter().all(|&v| v == 0.0));
        assert!(mel_spectrogram(&a).iter().all(|&v| v == 0.0));
        assert!(spectral_contrast(&a).iter().all(|&v| v == 0.0));
        assert!(spectral_centroid(&a).iter().all(|&v| v == 0.0));
        assert!(spectral_rolloff(&a).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn band_power_one_khz() {
        let x = sine(1000.0, 0.5, 15000);
        let a = Analysis::new(&x, 15000, &AcousticParams::default()).unwrap();
        let bp = band_power(&a);
        assert_eq!(bp.ncols(), 12);
        let edges = band_edges(50.0, 7500.0);
        let band = edges[1..].iter().position(|&e| 1000.0 < e).unwrap();
        for m in interior(&a) {
            let row = bp.row(m);
            assert!(row[band] / row.sum() >= 0.8, "frame {m}: {}", row[band] / row.sum());
        }
    }

    #[test]
    fn mel_energy_sum() {
        let x = noise(30000, 1);
        let a = Analysis::new(&x, 15000, &AcousticParams::default()).unwrap();
        let mel = mel_spectrogram(&a);
        assert_eq!(mel.ncols(), 128);
        let freqs = a.spec.bin_freqs();
        for m in interior(&a) {
            let banded: f64 = a.spec.power.row(m).iter().zip(&freqs).filter(|(_, &f)| f <= 7500.0).map(|(p, _)| p).sum();
            let total = mel.row(m).sum();
            assert!((total / banded - 1.0).abs() < 0.1, "frame {m}: {}", total / banded);
        }
    }

    #[test]
    fn full_scale_sine_loudness_and_rms() {
        let x = sine(437.0, 1.0, 15000);
        let a = Analysis::new(&x, 15000, &AcousticParams::default()).unwrap();
        let l = loudness(&a);
        for m in interior(&a) {
            assert!((l[[m, 0]] + 3.0103).abs() < 0.1, "{}", l[[m, 0]]);
        }
    }

    #[test]
    fn one_khz_centroid_and_bandwidth() {
        let x = sine(1000.0, 0.5, 15000);
        let a = Analysis::new(&x, 15000, &AcousticParams::default()).unwrap();
        let bin = 15000.0 / 1024.0;
        let c = spectral_centroid(&a);
        let b = spectral_bandwidth(&a);
        for m in interior(&a) {
            assert!((c[[m, 0]] - 1000.0).abs() <= bin, "{}", c[[m, 0]]);
            assert!(b[[m, 0]] < 2.0 * bin, "{}", b[[m, 0]]);
        }
    }

    #[test]
    fn flatness_and_rolloff_statistics() {
        // 100 frames of white noise
        let x = noise(484 * 100, 2);
        let a = Analysis::new(&x, 15000, &AcousticParams::default()).unwrap();
        let fl = spectral_flatness(&a);
        let ro = spectral_rolloff(&a);
        let r = interior(&a);
        let n = r.len() as f64;
        let mean_flat = r.clone().map(|m| fl[[m, 0]]).sum::<f64>() / n;
        let mean_roll = r.map(|m| ro[[m, 0]]).sum::<f64>() / n;
        assert!(mean_flat > 0.5, "{mean_flat}");
        assert!((mean_roll / 6375.0 - 1.0).abs() < 0.05, "{mean_roll}");
        let s = sine(1000.0, 0.5, 15000);
        let a = Analysis::new(&s, 15000, &AcousticParams::default()).unwrap();
        let fl = spectral_flatness(&a);
        for m in interior(&a) {
            assert!(fl[[m, 0]] < 0.05);
        }
    }

    #[test]
    fn contrast_tone_exceeds_noise() {
        let tone: Vec<f64> = (0..30000)
            .map(|i| {
                let t = i as f64 / 15000.0;
                (1..=68).map(|k| (2.0 * PI * 110.0 * k as f64 * t).sin()).sum::<f64>() * 0.01
            })
            .collect();
        let nz = noise(30000, 3);
        let p = AcousticParams::default();
        let at = Analysis::new(&tone, 15000, &p).unwrap();
        let an = Analysis::new(&nz, 15000, &p).unwrap();
        let ct = spectral_contrast(&at);
        let cn = spectral_contrast(&an);
        assert_eq!(ct.ncols(), 7);
        let mt = ct.mean_axis(ndarray::Axis(0)).unwrap();
        let mn = cn.mean_axis(ndarray::Axis(0)).unwrap();
        for b in 0..7 {
            assert!(mt[b] > mn[b], "band {b}: tone {} noise {}", mt[b], mn[b]);
        }
    }

    #[test]
    fn line_fit_exact_cases() {
        let f: Vec<f64> = (0..513).map(|k| k as f64 * 15000.0 / 1024.0).collect();
        let flat = vec![0.1; 513];
        let (s, c) = line_fit(&f, &flat);
        assert_eq!(s, 0.0);
        assert!((c - 0.1).abs() < 1e-15);
        let planted: Vec<f64> = f.iter().map(|v| 3.5e-4 * v + 2.25).collect();
        let (s, c) = line_fit(&f, &planted);
        assert!((s - 3.5e-4).abs() < 1e-6);
        assert!((c - 2.25).abs() < 1e-6);
    }

    #[test]
    fn mel_filters_partition_unity() {
        let f: Vec<f64> = (0..513).map(|k| k as f64 * 15000.0 / 1024.0).collect();
        let fb = mel_filterbank(128, &f, 7500.0);
        let lo = mel_to_hz(hz_to_mel(7500.0) / 129.0);
        let hi = mel_to_hz(hz_to_mel(7500.0) * 128.0 / 129.0);
        for (k, &fk) in f.iter().enumerate() {
            if fk >= lo && fk <= hi {
                let s: f64 = fb.column(k).sum();
                assert!((s - 1.0).abs() < 1e-9, "bin {k}: {s}");
            }
        }
        assert!((hz_to_mel(mel_to_hz(1234.5)) - 1234.5).abs() < 1e-9);
    }
}
