//! Signal-processing primitives shared by the EEG and audio paths.

mod grid;
mod iir;
mod resample;
mod stft;

pub use grid::{frame_grid_for_rate, FrameGrid, FEATURE_RATE_HZ};
pub use iir::{design_butterworth_bandpass, design_iir_notch, filtfilt, Biquad, IirFilter};
pub use resample::resample_poly;
pub use stft::{hann_periodic, stft_frame_count, stft_power, PowerSpectrogram, RealFft};
pub(crate) use stft::centered_frames;

#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("unstable filter: {0}")]
    UnstableFilter(String),
    #[error("signal too short: need at least {needed} samples, got {got}")]
    SignalTooShort { needed: usize, got: usize },
    #[error("invalid sample rate: {0}")]
    InvalidRate(String),
    #[error("fft size {0} must be a power of two >= 64")]
    InvalidFftSize(usize),
    #[error("hop must be at least 1")]
    InvalidHop,
    #[error("invalid frame grid: {0}")]
    InvalidGrid(String),
}
