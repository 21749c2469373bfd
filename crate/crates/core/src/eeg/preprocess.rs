use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{fast_ica, remove_artifact_components, EegError};
use crate::dataio::{EegRecording, EEG_CHANNELS};
use crate::dsp::{design_butterworth_bandpass, design_iir_notch, filtfilt};

const ZSCORE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceFlags {
    pub bandpassed: bool,
    pub notched: bool,
    pub ica_cleaned: bool,
    pub zscored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaOptions {
    pub kurtosis_threshold: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for IcaOptions {
    fn default() -> Self {
        IcaOptions {
            kurtosis_threshold: 8.0,
            max_iter: 200,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    /// `(order, lo_hz, hi_hz)`.
    pub bandpass: Option<(usize, f64, f64)>,
    /// `(f0_hz, q)`.
    pub notch: Option<(f64, f64)>,
    pub ica: Option<IcaOptions>,
    pub zscore: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            bandpass: Some((4, 0.1, 70.0)),
            notch: Some((60.0, 30.0)),
            ica: Some(IcaOptions::default()),
            zscore: true,
        }
    }
}

/// What the ICA stage did, kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaSummary {
    pub components: usize,
    pub removed: Vec<usize>,
    pub kurtosis: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanEeg {
    pub data: Array2<f64>,
    pub sample_rate_hz: u32,
    pub flags: ProvenanceFlags,
    pub ica: Option<IcaSummary>,
}

/// Band-pass, notch, optional ICA cleaning and per-channel z-scoring, in
/// that order. Filters run forward-backward, so no phase is introduced.
pub fn preprocess_eeg(rec: &EegRecording, opts: &PreprocessOptions) -> Result<CleanEeg, EegError> {
    if rec.channels() != EEG_CHANNELS {
        return Err(EegError::ChannelCount {
            expected: EEG_CHANNELS,
            got: rec.channels(),
        });
    }
    if let Some(((channel, sample), _)) = rec.data().indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(EegError::NonFinite { channel, sample });
    }
    let fs = rec.sample_rate_hz() as f64;
    let mut data = rec.data().to_owned();
    let mut flags = ProvenanceFlags::default();

    if let Some((order, lo, hi)) = opts.bandpass {
        let bp = design_butterworth_bandpass(order, lo, hi, fs)?;
        filter_rows(&mut data, |row| filtfilt(&bp, row))?;
        flags.bandpassed = true;
    }
    if let Some((f0, q)) = opts.notch {
        let notch = design_iir_notch(f0, q, fs)?;
        filter_rows(&mut data, |row| filtfilt(&notch, row))?;
        flags.notched = true;
    }
    let mut summary = None;
    if let Some(ica_opts) = &opts.ica {
        let ica = fast_ica(&data, data.nrows(), ica_opts.seed, ica_opts.max_iter, ica_opts.tol)?;
        if !ica.converged {
            log::warn!(
                "FastICA did not converge in {} iterations; using best iterate",
                ica.iterations
            );
        }
        let removal = remove_artifact_components(&data, &ica, ica_opts.kurtosis_threshold);
        summary = Some(IcaSummary {
            components: ica.n_components(),
            removed: removal.removed.clone(),
            kurtosis: removal.kurtosis.clone(),
            converged: ica.converged,
            iterations: ica.iterations,
        });
        data = removal.cleaned;
        flags.ica_cleaned = true;
    }
    if opts.zscore {
        zscore_rows(&mut data);
        flags.zscored = true;
    }
    Ok(CleanEeg {
        data,
        sample_rate_hz: rec.sample_rate_hz(),
        flags,
        ica: summary,
    })
}

fn filter_rows(
    data: &mut Array2<f64>,
    f: impl Fn(&[f64]) -> Result<Vec<f64>, crate::dsp::DspError>,
) -> Result<(), EegError> {
    for mut row in data.rows_mut() {
        let out = f(&row.to_vec())?;
        for (d, v) in row.iter_mut().zip(out) {
            *d = v;
        }
    }
    Ok(())
}

/// Zero mean, unit (population) variance per row; flat rows become zeros.
pub(crate) fn zscore_rows(data: &mut Array2<f64>) {
    for mut row in data.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd < ZSCORE_FLOOR {
            row.fill(0.0);
        } else {
            row.mapv_inplace(|v| (v - mean) / sd);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::RealFft;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn noise_recording(samples: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((EEG_CHANNELS, samples), |_| 10.0 * rng.sample::<f64, _>(StandardNormal))
    }

    fn power_at(x: &[f64], fs: f64, f: f64) -> f64 {
        let fft = RealFft::new(x.len());
        let p = fft.power(x);
        p[(f * x.len() as f64 / fs).round() as usize]
    }

    #[test]
    fn output_shape_and_zscore_invariant() {
        let rec = EegRecording::new(noise_recording(3000, 1), 1000).unwrap();
        let opts = PreprocessOptions {
            ica: None,
            ..Default::default()
        };
        let clean = preprocess_eeg(&rec, &opts).unwrap();
        assert_eq!(clean.data.dim(), (31, 3000));
        assert!(clean.flags.bandpassed && clean.flags.notched && clean.flags.zscored);
        assert!(!clean.flags.ica_cleaned);
        for row in clean.data.rows() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn line_noise_suppressed() {
        // periodogram oracle: compare 60 Hz power before and after on the
        // injected channel, with z-scoring off so scales are comparable
        let n = 4000;
        let mut data = noise_recording(n, 2) * 0.01;
        for t in 0..n {
            data[[7, t]] += 50.0 * (2.0 * PI * 60.0 * t as f64 / 1000.0).sin();
        }
        let before = power_at(&data.row(7).to_vec(), 1000.0, 60.0);
        let rec = EegRecording::new(data, 1000).unwrap();
        let opts = PreprocessOptions {
            bandpass: None,
            ica: None,
            zscore: false,
            ..Default::default()
        };
        let clean = preprocess_eeg(&rec, &opts).unwrap();
        let mid: Vec<f64> = clean.data.row(7).to_vec();
        let after = power_at(&mid, 1000.0, 60.0);
        let drop_db = 10.0 * (before / after).log10();
        assert!(drop_db >= 30.0, "only {drop_db:.1} dB");
    }

    #[test]
    fn zero_recording_maps_to_zero() {
        let rec = EegRecording::new(Array2::zeros((31, 1000)), 1000).unwrap();
        let clean = preprocess_eeg(&rec, &PreprocessOptions::default()).unwrap();
        assert!(clean.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ica_stage_records_summary() {
        let rec = EegRecording::new(noise_recording(2000, 3), 1000).unwrap();
        let clean = preprocess_eeg(&rec, &PreprocessOptions::default()).unwrap();
        assert!(clean.flags.ica_cleaned);
        let s = clean.ica.unwrap();
        assert_eq!(s.components, 31);
        assert!(s.removed.is_empty(), "gaussian data should keep all components");
    }
}
