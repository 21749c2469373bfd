//! Centered short-time Fourier power spectra.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::DspError;

/// Frames × bins of `|DFT|^2` values.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub power: Array2<f64>,
    pub fft_size: usize,
    pub hop: usize,
    pub sample_rate_hz: u32,
}

impl PowerSpectrogram {
    pub fn frames(&self) -> usize {
        self.power.nrows()
    }

    pub fn bins(&self) -> usize {
        self.power.ncols()
    }

    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate_hz as f64 / self.fft_size as f64
    }

    pub fn bin_freqs(&self) -> Vec<f64> {
        (0..self.bins()).map(|k| self.bin_hz(k)).collect()
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of frames produced for a signal of `len` samples.
pub fn stft_frame_count(len: usize, hop: usize) -> usize {
    1 + len / hop
}

/// Reflect-pads `signal` by `pad` samples on each side (edge sample not
/// repeated). Requires `pad < signal.len()`.
pub(crate) fn reflect_pad(signal: &[f64], pad: usize) -> Vec<f64> {
    let n = signal.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| signal[i]));
    out.extend_from_slice(signal);
    out.extend((1..=pad).map(|i| signal[n - 1 - i]));
    out
}

/// Frames of the reflect-padded signal, each `frame_len` long, starting at
/// multiples of `hop`. Frame `m` is centered on input sample `m * hop`.
pub(crate) fn centered_frames(signal: &[f64], frame_len: usize, hop: usize) -> Vec<Vec<f64>> {
    let padded = reflect_pad(signal, frame_len / 2);
    let count = stft_frame_count(signal.len(), hop);
    (0..count)
        .map(|m| padded[m * hop..m * hop + frame_len].to_vec())
        .collect()
}

/// Reusable forward FFT of one size.
pub struct RealFft {
    size: usize,
    plan: Arc<dyn Fft<f64>>,
}

impl RealFft {
    pub fn new(size: usize) -> Self {
        let plan = FftPlanner::new().plan_fft_forward(size);
        RealFft { size, plan }
    }

    /// `|X_k|^2` for `k = 0..=size/2`. Input shorter than `size` is
    /// zero-padded.
    pub fn power(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = frame
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
            .take(self.size)
            .collect();
        self.plan.process(&mut buf);
        buf[..=self.size / 2].iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn spectrum(&self, frame: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = frame
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
            .take(self.size)
            .collect();
        self.plan.process(&mut buf);
        buf
    }
}

/// Power spectrogram with a periodic Hann window and reflection padding of
/// `fft_size / 2` on both ends.
pub fn stft_power(
    signal: &[f64],
    fft_size: usize,
    hop: usize,
    sample_rate_hz: u32,
) -> Result<PowerSpectrogram, DspError> {
    if fft_size < 64 || !fft_size.is_power_of_two() {
        return Err(DspError::InvalidFftSize(fft_size));
    }
    if hop == 0 {
        return Err(DspError::InvalidHop);
    }
    if signal.len() < fft_size {
        return Err(DspError::SignalTooShort {
            needed: fft_size,
            got: signal.len(),
        });
    }
    let window = hann_periodic(fft_size);
    let fft = RealFft::new(fft_size);
    let frames = centered_frames(signal, fft_size, hop);
    let bins = fft_size / 2 + 1;
    let mut power = Array2::zeros((frames.len(), bins));
    for (m, frame) in frames.iter().enumerate() {
        let windowed: Vec<f64> = frame.iter().zip(&window).map(|(x, w)| x * w).collect();
        for (k, p) in fft.power(&windowed).into_iter().enumerate() {
            power[[m, k]] = p;
        }
    }
    Ok(PowerSpectrogram {
        power,
        fft_size,
        hop,
        sample_rate_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bin_centered_sine_concentrates() {
        let n = 256;
        let fs = 1000;
        let k = 20;
        let f = k as f64 * fs as f64 / n as f64;
        let x: Vec<f64> = (0..4000)
            .map(|i| (2.0 * PI * f * i as f64 / fs as f64).sin())
            .collect();
        let spec = stft_power(&x, n, 32, fs).unwrap();
        // interior frames (edge frames see reflected copies)
        for m in 10..spec.frames() - 10 {
            let row = spec.power.row(m);
            let total: f64 = row.sum();
            let lobe = row[k - 1] + row[k] + row[k + 1];
            assert!(lobe / total >= 0.9, "frame {m}");
            // periodic Hann puts amplitudes 1/2, 1, 1/2 on bins k-1, k, k+1
            assert!((row[k] / total - 2.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_signal_gives_zero_power() {
        let spec = stft_power(&[0.0; 2000], 256, 32, 1000).unwrap();
        assert!(spec.power.iter().all(|&p| p == 0.0));
        assert_eq!(spec.bins(), 129);
    }

    #[test]
    fn parseval_per_frame() {
        let n = 512;
        let x: Vec<f64> = (0..5000)
            .map(|i| ((i * 7919) % 1013) as f64 / 1013.0 - 0.5)
            .collect();
        let spec = stft_power(&x, n, 128, 16000).unwrap();
        let window = hann_periodic(n);
        let frames = centered_frames(&x, n, 128);
        for (m, frame) in frames.iter().enumerate() {
            let direct: f64 = frame
                .iter()
                .zip(&window)
                .map(|(v, w)| (v * w).powi(2))
                .sum();
            let row = spec.power.row(m);
            let folded: f64 = row
                .iter()
                .enumerate()
                .map(|(k, p)| if k == 0 || k == n / 2 { *p } else { 2.0 * p })
                .sum();
            assert!((folded / n as f64 - direct).abs() <= 0.01 * direct);
        }
    }

    #[test]
    fn rejects_bad_params() {
        let x = vec![0.0; 1000];
        assert!(matches!(stft_power(&x, 100, 10, 1000), Err(DspError::InvalidFftSize(100))));
        assert!(matches!(stft_power(&x, 32, 10, 1000), Err(DspError::InvalidFftSize(32))));
        assert!(matches!(stft_power(&x, 64, 0, 1000), Err(DspError::InvalidHop)));
        assert!(matches!(
            stft_power(&x[..100], 256, 10, 1000),
            Err(DspError::SignalTooShort { .. })
        ));
    }

    proptest! {
        #[test]
        fn frame_count_formula(len in 256usize..5000, hop in 1usize..600) {
            let x = vec![0.1; len];
            let spec = stft_power(&x, 256, hop, 1000).unwrap();
            prop_assert_eq!(spec.frames(), 1 + (len + 256 - 256) / hop);
        }
    }
}
