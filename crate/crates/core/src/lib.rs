pub mod dataio;
pub mod dsp;
pub mod acoustic;
pub mod eeg;
pub mod eval;
pub mod linalg;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod standardize;
pub mod textfmt;
