//! Per-frame statistical EEG descriptors.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{CleanEeg, EegError};
use crate::dsp::{FrameGrid, RealFft};

pub const STATS_PER_CHANNEL: usize = 5;
pub const MIN_FRAME_LEN: usize = 8;
/// Moving-average length for the `mwa` statistic.
pub const MWA_LEN: usize = 8;
const VARIANCE_FLOOR: f64 = 1e-12;

/// `rms, zcr, mwa, kurtosis, pse` of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameStats {
    pub rms: f64,
    pub zcr: f64,
    pub mwa: f64,
    pub kurtosis: f64,
    pub pse: f64,
}

impl FrameStats {
    pub fn to_array(self) -> [f64; STATS_PER_CHANNEL] {
        [self.rms, self.zcr, self.mwa, self.kurtosis, self.pse]
    }
}

/// Sign changes between successive non-zero samples, over `len - 1`.
pub fn zero_crossing_rate(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let mut last = 0.0f64;
    let mut changes = 0usize;
    for &v in x {
        if v != 0.0 {
            if last != 0.0 && (v > 0.0) != (last > 0.0) {
                changes += 1;
            }
            last = v;
        }
    }
    changes as f64 / (x.len() - 1) as f64
}

/// Central second moment and excess kurtosis (`m4 / m2^2 - 3`, 0 when
/// `m2 < 1e-12`).
pub fn excess_kurtosis(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if m2 < VARIANCE_FLOOR {
        return 0.0;
    }
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

/// Reusable frame statistic evaluator for one frame length.
pub struct FrameStatsExtractor {
    len: usize,
    fft: RealFft,
}

impl FrameStatsExtractor {
    pub fn new(len: usize) -> Result<Self, EegError> {
        if len < MIN_FRAME_LEN {
            return Err(EegError::FrameTooShort(len));
        }
        Ok(FrameStatsExtractor {
            len,
            fft: RealFft::new(len),
        })
    }

    pub fn compute(&self, x: &[f64]) -> FrameStats {
        assert_eq!(x.len(), self.len, "frame length mismatch");
        let n = x.len() as f64;
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let zcr = zero_crossing_rate(x);

        let windows = x.len() - MWA_LEN + 1;
        let mut acc: f64 = x[..MWA_LEN].iter().sum();
        let mut mwa_sum = acc / MWA_LEN as f64;
        for i in 1..windows {
            acc += x[i + MWA_LEN - 1] - x[i - 1];
            mwa_sum += acc / MWA_LEN as f64;
        }
        let mwa = mwa_sum / windows as f64;

        let mean = x.iter().sum::<f64>() / n;
        let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let (kurtosis, pse) = if m2 < VARIANCE_FLOOR {
            (0.0, 0.0)
        } else {
            let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
            (m4 / (m2 * m2) - 3.0, self.spectral_entropy(x))
        };
        FrameStats {
            rms,
            zcr,
            mwa,
            kurtosis,
            pse,
        }
    }

    /// Normalized Shannon entropy of the periodogram over the positive
    /// frequency bins `1..=len/2`.
    fn spectral_entropy(&self, x: &[f64]) -> f64 {
        let power = self.fft.power(x);
        let bins = &power[1..];
        let total: f64 = bins.iter().sum();
        if total <= 0.0 || bins.len() < 2 {
            return 0.0;
        }
        let h: f64 = bins
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| {
                let q = p / total;
                -q * q.ln()
            })
            .sum();
        h / (bins.len() as f64).ln()
    }
}

/// The five statistics of a single frame (sampling rate does not enter the
/// normalized quantities).
pub fn frame_stats(frame: &[f64], _fs_hz: u32) -> Result<FrameStats, EegError> {
    Ok(FrameStatsExtractor::new(frame.len())?.compute(frame))
}

/// `frames × (31 · 5)` matrix, channel-major: `ch01:[rms, zcr, mwa, kurt,
/// pse], ch02:[...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatFeatureSeq {
    pub features: Array2<f64>,
    pub grid: FrameGrid,
}

pub fn stat_feature_names(channels: usize) -> Vec<String> {
    let names = ["rms", "zcr", "mwa", "kurt", "pse"];
    (1..=channels)
        .flat_map(|c| names.iter().map(move |n| format!("ch{c:02}_{n}")))
        .collect()
}

/// Number of complete windows of `grid.window_len` starting every `grid.hop`.
pub fn stat_frame_count(samples: usize, grid: &FrameGrid) -> usize {
    if samples < grid.window_len {
        0
    } else {
        (samples - grid.window_len) / grid.hop + 1
    }
}

pub fn extract_stat_features(clean: &CleanEeg, grid: &FrameGrid) -> Result<StatFeatureSeq, EegError> {
    if grid.sample_rate_hz != clean.sample_rate_hz {
        return Err(EegError::GridMismatch {
            grid: grid.sample_rate_hz,
            signal: clean.sample_rate_hz,
        });
    }
    let data = &clean.data;
    let samples = data.ncols();
    let frames = stat_frame_count(samples, grid);
    if frames == 0 {
        return Err(EegError::RecordingTooShort {
            samples,
            window: grid.window_len,
        });
    }
    let extractor = FrameStatsExtractor::new(grid.window_len)?;
    let channels = data.nrows();
    let mut features = Array2::zeros((frames, channels * STATS_PER_CHANNEL));
    for c in 0..channels {
        let row = data.row(c);
        let row = row.as_slice().expect("standard layout");
        for f in 0..frames {
            let start = f * grid.hop;
            let stats = extractor.compute(&row[start..start + grid.window_len]).to_array();
            for (k, v) in stats.into_iter().enumerate() {
                features[[f, c * STATS_PER_CHANNEL + k]] = v;
            }
        }
    }
    Ok(StatFeatureSeq {
        features,
        grid: *grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::frame_grid_for_rate;
    use crate::eeg::ProvenanceFlags;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    #[test]
    fn constant_frame() {
        let s = frame_stats(&[0.5; 32], 1000).unwrap();
        assert!((s.rms - 0.5).abs() < 1e-15);
        assert_eq!(s.zcr, 0.0);
        assert!((s.mwa - 0.5).abs() < 1e-15);
        assert_eq!(s.kurtosis, 0.0);
        assert_eq!(s.pse, 0.0);
    }

    #[test]
    fn sine_zero_crossings() {
        // 50 Hz at 1000 Hz over 1000 samples: 100 crossings when the phase keeps
        // the sampled zeros off the grid
        let x: Vec<f64> = (0..1000)
            .map(|i| (2.0 * PI * 50.0 * i as f64 / 1000.0 + PI / 4.0).sin())
            .collect();
        let s = frame_stats(&x, 1000).unwrap();
        assert!((s.zcr - 100.0 / 999.0).abs() < 1e-15);
    }

    #[test]
    fn alternating_kurtosis() {
        let x: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let s = frame_stats(&x, 1000).unwrap();
        assert!((s.kurtosis + 2.0).abs() < 1e-12);
        assert!((s.zcr - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_entropy_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        let s = frame_stats(&noise, 1000).unwrap();
        assert!(s.pse > 0.9, "{}", s.pse);
        let tone: Vec<f64> = (0..1000)
            .map(|i| (2.0 * PI * 25.0 * i as f64 / 1000.0).sin())
            .collect();
        let s = frame_stats(&tone, 1000).unwrap();
        assert!(s.pse < 0.2, "{}", s.pse);
    }

    #[test]
    fn sign_flip_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let x: Vec<f64> = (0..32)
                .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.sample(StandardNormal) })
                .collect();
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let a = frame_stats(&x, 1000).unwrap();
            let b = frame_stats(&neg, 1000).unwrap();
            assert!((a.rms - b.rms).abs() < 1e-12);
            assert_eq!(a.zcr, b.zcr);
            assert!((a.kurtosis - b.kurtosis).abs() < 1e-9);
            assert!((a.pse - b.pse).abs() < 1e-12);
            assert!((a.mwa + b.mwa).abs() < 1e-12);
        }
    }

    #[test]
    fn short_frame_rejected() {
        assert!(matches!(frame_stats(&[1.0; 7], 1000), Err(EegError::FrameTooShort(7))));
    }

    fn clean(data: Array2<f64>) -> CleanEeg {
        CleanEeg {
            data,
            sample_rate_hz: 1000,
            flags: ProvenanceFlags::default(),
            ica: None,
        }
    }

    #[test]
    fn feature_matrix_shape_and_order() {
        let grid = frame_grid_for_rate(1000, 31.0).unwrap();
        let data = Array2::from_shape_fn((31, 10_000), |(c, t)| {
            (c as f64 + 1.0) * ((t as f64) * 0.37).sin()
        });
        let seq = extract_stat_features(&clean(data), &grid).unwrap();
        assert_eq!(seq.features.dim(), (312, 155));
        // channel-major layout: rms of ch k scales with k + 1
        let r1 = seq.features[[5, 0]];
        let r3 = seq.features[[5, 2 * STATS_PER_CHANNEL]];
        assert!((r3 / r1 - 3.0).abs() < 1e-9);
        assert_eq!(stat_feature_names(31).len(), 155);
        assert_eq!(stat_feature_names(31)[6], "ch02_zcr");
    }

    #[test]
    fn zero_recording_gives_zero_features() {
        let grid = frame_grid_for_rate(1000, 31.0).unwrap();
        let seq = extract_stat_features(&clean(Array2::zeros((31, 500))), &grid).unwrap();
        assert!(seq.features.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_recording() {
        let grid = frame_grid_for_rate(1000, 31.0).unwrap();
        assert!(matches!(
            extract_stat_features(&clean(Array2::zeros((31, 20))), &grid),
            Err(EegError::RecordingTooShort { .. })
        ));
    }
}
