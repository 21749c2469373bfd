//! EEG preprocessing, per-frame statistics and kernel-PCA reduction.

mod ica;
mod kpca;
mod preprocess;
mod stats;

pub use ica::{fast_ica, remove_artifact_components, ArtifactRemoval, IcaResult};
pub use kpca::{
    explained_variance_curve, kpca_fit, kpca_transform, subsample_rows, KernelParams, KpcaModel,
    KPCA_OUT_DIM,
};
pub use preprocess::{preprocess_eeg, CleanEeg, IcaOptions, IcaSummary, PreprocessOptions, ProvenanceFlags};
pub use stats::{
    excess_kurtosis, extract_stat_features, frame_stats, stat_feature_names, stat_frame_count,
    zero_crossing_rate, FrameStats, FrameStatsExtractor, StatFeatureSeq, MWA_LEN, STATS_PER_CHANNEL,
};

use crate::dsp::DspError;

#[derive(Debug, thiserror::Error)]
pub enum EegError {
    #[error("expected {expected} channels, got {got}")]
    ChannelCount { expected: usize, got: usize },
    #[error("non-finite EEG value in channel {channel} at sample {sample}")]
    NonFinite { channel: usize, sample: usize },
    #[error("frame of {0} samples is shorter than the minimum of 8")]
    FrameTooShort(usize),
    #[error("recording of {samples} samples is shorter than one {window}-sample frame")]
    RecordingTooShort { samples: usize, window: usize },
    #[error("frame grid is for {grid} Hz but the signal is at {signal} Hz")]
    GridMismatch { grid: u32, signal: u32 },
    #[error("invalid ICA request: {0}")]
    InvalidIca(String),
    #[error("KPCA needs at least {needed} training rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("KPCA training data is rank deficient: centered kernel has no positive eigenvalue")]
    RankDeficient,
    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid KPCA parameters: {0}")]
    InvalidKernel(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
}
