//! Run configuration: a sectioned TOML file where every key is optional.
//!
//! Missing keys take their defaults, unknown keys are rejected, and the
//! resolved configuration (defaults filled in, derived values made
//! explicit) is written back next to the artifacts. Parsing that echo
//! reproduces the same configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustic::AcousticParams;
use crate::dataio::{SplitRatios, EEG_RATE_HZ};
use crate::dsp::{frame_grid_for_rate, FrameGrid};
use crate::eeg::{IcaOptions, KernelParams, PreprocessOptions, STATS_PER_CHANNEL};
use crate::nn::{AdamConfig, RegressionConfig, SynthesisConfig, TrainConfig, UpsampleMode};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },
    /// A value that parsed but is out of range or of the wrong type.
    #[error("{key}: {message}{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Invalid {
        key: String,
        line: Option<usize>,
        message: String,
    },
}

impl ConfigError {
    fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            line: None,
            message: message.into(),
        }
    }
}

/// How trials are pooled when fitting per-group models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Pooled,
    Subject,
    SubjectCondition,
}

impl Grouping {
    /// Whether every group of `self` lies inside one group of `coarser`.
    pub fn refines(self, coarser: Grouping) -> bool {
        let rank = |g: Grouping| match g {
            Grouping::Pooled => 0,
            Grouping::Subject => 1,
            Grouping::SubjectCondition => 2,
        };
        rank(self) >= rank(coarser)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: String,
    /// Dataset directory holding `manifest.json`; empty means `{out_dir}/data`.
    pub data_root: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            out_dir: "out".into(),
            data_root: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n_trials: i64,
    pub duration_s: f64,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let r = SplitRatios::default();
        DataSection {
            n_trials: 50,
            duration_s: 2.0,
            train_ratio: r.train,
            val_ratio: r.val,
            test_ratio: r.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EegSection {
    pub bandpass: bool,
    pub bandpass_order: i64,
    pub bandpass_lo_hz: f64,
    pub bandpass_hi_hz: f64,
    pub notch: bool,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub ica: bool,
    pub ica_kurtosis_threshold: f64,
    pub ica_max_iter: i64,
    pub ica_tol: f64,
    pub zscore: bool,
    pub feature_rate_hz: f64,
    /// Statistics window in samples; 0 means one hop.
    pub stat_window: i64,
}

impl Default for EegSection {
    fn default() -> Self {
        let ica = IcaOptions::default();
        EegSection {
            bandpass: true,
            bandpass_order: 4,
            bandpass_lo_hz: 0.1,
            bandpass_hi_hz: 70.0,
            notch: true,
            notch_hz: 60.0,
            notch_q: 30.0,
            ica: true,
            ica_kurtosis_threshold: ica.kurtosis_threshold,
            ica_max_iter: ica.max_iter as i64,
            ica_tol: ica.tol,
            zscore: true,
            feature_rate_hz: 31.0,
            stat_window: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KpcaSection {
    pub out_dim: i64,
    pub degree: i64,
    /// Kernel scale; 0 means `1 / input_dim`.
    pub gamma: f64,
    pub coef0: f64,
    pub max_fit_frames: i64,
    pub grouping: Grouping,
}

impl Default for KpcaSection {
    fn default() -> Self {
        KpcaSection {
            out_dim: 30,
            degree: 3,
            gamma: 0.0,
            coef0: 1.0,
            max_fit_frames: 1000,
            grouping: Grouping::Subject,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSection {
    pub filters1: i64,
    pub filters2: i64,
    pub kernel: i64,
    pub dilation: i64,
    pub residual: bool,
    pub upsample1: i64,
    pub upsample2: i64,
    pub upsample_mode: UpsampleMode,
    pub dropout: f64,
    pub head_before_final_upsample: bool,
    pub epochs: i64,
    pub batch_size: i64,
    pub lr: f64,
    pub grouping: Grouping,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        let m = SynthesisConfig::default();
        SynthesisSection {
            filters1: m.filters1 as i64,
            filters2: m.filters2 as i64,
            kernel: m.kernel as i64,
            dilation: m.dilation as i64,
            residual: m.residual,
            upsample1: m.upsample1 as i64,
            upsample2: m.upsample2 as i64,
            upsample_mode: m.upsample_mode,
            dropout: m.dropout,
            head_before_final_upsample: m.head_before_final_upsample,
            epochs: 5000,
            batch_size: 100,
            lr: 1e-3,
            grouping: Grouping::SubjectCondition,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSection {
    pub hidden: i64,
    pub dropout: f64,
    pub epochs: i64,
    pub batch_size: i64,
    pub lr: f64,
    pub grouping: Grouping,
}

impl Default for RegressionSection {
    fn default() -> Self {
        RegressionSection {
            hidden: 128,
            dropout: 0.2,
            epochs: 500,
            batch_size: 100,
            lr: 1e-3,
            grouping: Grouping::SubjectCondition,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub spectrogram_fft: i64,
    pub spectrogram_hop: i64,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            spectrogram_fft: 512,
            spectrogram_hop: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub eeg: EegSection,
    pub kpca: KpcaSection,
    pub acoustic: AcousticParams,
    pub synthesis: SynthesisSection,
    pub regression: RegressionSection,
    pub report: ReportSection,
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_toml())
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Dotted key at `offset`: the enclosing `[section]` plus the key on that
/// line (or the section name itself when the offset is on a header).
fn key_at(text: &str, offset: usize) -> String {
    let offset = offset.min(text.len());
    let start = text[..offset].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next().unwrap_or("").trim();
    if let Some(h) = line.strip_prefix('[') {
        return h.trim_end_matches(']').trim().to_string();
    }
    let section = text[..start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    let key = line.split('=').next().unwrap_or("").trim().trim_matches('"').to_string();
    match section {
        Some(s) if !key.is_empty() => format!("{s}.{key}"),
        Some(s) => s,
        None => key,
    }
}

fn map_toml_error(text: &str, e: toml::de::Error) -> ConfigError {
    let message = e.message().trim().to_string();
    let Some(span) = e.span() else {
        return ConfigError::Syntax { line: 1, message };
    };
    let line = line_of(text, span.start);
    let src = text.lines().nth(line - 1).unwrap_or("").trim_start();
    // errors on a `key = value` line or a header are about that key
    if src.contains('=') || src.starts_with('[') {
        let key = key_at(text, span.start);
        if !key.is_empty() {
            return ConfigError::Invalid {
                key,
                line: Some(line),
                message,
            };
        }
    }
    ConfigError::Syntax { line, message }
}

fn positive(key: &str, v: i64) -> Result<usize, ConfigError> {
    if v >= 1 {
        Ok(v as usize)
    } else {
        Err(ConfigError::invalid(key, format!("must be at least 1, got {v}")))
    }
}

fn non_negative(key: &str, v: i64) -> Result<usize, ConfigError> {
    if v >= 0 {
        Ok(v as usize)
    } else {
        Err(ConfigError::invalid(key, format!("must be non-negative, got {v}")))
    }
}

fn finite_positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::invalid(key, format!("must be a positive number, got {v}")))
    }
}

fn unit_interval(key: &str, v: f64) -> Result<f64, ConfigError> {
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(ConfigError::invalid(key, format!("must be in [0, 1), got {v}")))
    }
}

/// Reads a config file's text.
pub fn read_config(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl RunConfig {
    /// Parses TOML text, fills defaults, validates and resolves derived
    /// values.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_str_with(text, None, None)
    }

    /// Like [`RunConfig::from_toml_str`], with command-line overrides for
    /// the seed and output directory applied before resolution so that a
    /// derived data root follows the overridden output directory.
    pub fn from_toml_str_with(text: &str, seed: Option<u64>, out_dir: Option<&str>) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| map_toml_error(text, e))?;
        if let Some(seed) = seed {
            cfg.run.seed = seed;
        }
        if let Some(out) = out_dir {
            cfg.run.out_dir = out.to_string();
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&read_config(path)?)
    }

    /// The default configuration, resolved.
    pub fn defaults() -> Self {
        Self::from_toml_str("").expect("defaults are valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    /// Validates every field and makes derived values explicit.
    pub fn resolve(&mut self) -> Result<(), ConfigError> {
        if self.run.out_dir.trim().is_empty() {
            return Err(ConfigError::invalid("run.out_dir", "must not be empty"));
        }
        if self.run.data_root.trim().is_empty() {
            self.run.data_root = Path::new(&self.run.out_dir).join("data").display().to_string();
        }

        let d = &self.data;
        positive("data.n_trials", d.n_trials)?;
        if !(d.duration_s.is_finite() && (0.5..=10.0).contains(&d.duration_s)) {
            return Err(ConfigError::invalid(
                "data.duration_s",
                format!("must be in [0.5, 10], got {}", d.duration_s),
            ));
        }
        for (k, v) in [
            ("data.train_ratio", d.train_ratio),
            ("data.val_ratio", d.val_ratio),
            ("data.test_ratio", d.test_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::invalid(k, format!("must be in [0, 1], got {v}")));
            }
        }
        self.split_ratios()
            .validate()
            .map_err(|e| ConfigError::invalid("data.train_ratio", e.to_string()))?;

        let e = &self.eeg;
        positive("eeg.bandpass_order", e.bandpass_order)?;
        finite_positive("eeg.bandpass_lo_hz", e.bandpass_lo_hz)?;
        finite_positive("eeg.bandpass_hi_hz", e.bandpass_hi_hz)?;
        if e.bandpass_lo_hz >= e.bandpass_hi_hz || e.bandpass_hi_hz >= EEG_RATE_HZ as f64 / 2.0 {
            return Err(ConfigError::invalid(
                "eeg.bandpass_hi_hz",
                "need bandpass_lo_hz < bandpass_hi_hz < 500",
            ));
        }
        finite_positive("eeg.notch_hz", e.notch_hz)?;
        if e.notch_hz >= EEG_RATE_HZ as f64 / 2.0 {
            return Err(ConfigError::invalid("eeg.notch_hz", "must be below 500"));
        }
        finite_positive("eeg.notch_q", e.notch_q)?;
        finite_positive("eeg.ica_kurtosis_threshold", e.ica_kurtosis_threshold)?;
        positive("eeg.ica_max_iter", e.ica_max_iter)?;
        finite_positive("eeg.ica_tol", e.ica_tol)?;
        finite_positive("eeg.feature_rate_hz", e.feature_rate_hz)?;
        non_negative("eeg.stat_window", e.stat_window)?;
        let grid = frame_grid_for_rate(EEG_RATE_HZ, e.feature_rate_hz)
            .map_err(|err| ConfigError::invalid("eeg.feature_rate_hz", err.to_string()))?;
        if self.eeg.stat_window == 0 {
            self.eeg.stat_window = grid.hop as i64;
        }
        grid.with_window(self.eeg.stat_window as usize)
            .map_err(|err| ConfigError::invalid("eeg.stat_window", err.to_string()))?;

        let k = &self.kpca;
        positive("kpca.out_dim", k.out_dim)?;
        positive("kpca.degree", k.degree)?;
        if k.degree > 10 {
            return Err(ConfigError::invalid("kpca.degree", format!("must be at most 10, got {}", k.degree)));
        }
        if !(k.gamma.is_finite() && k.gamma >= 0.0) {
            return Err(ConfigError::invalid("kpca.gamma", format!("must be non-negative, got {}", k.gamma)));
        }
        if !k.coef0.is_finite() {
            return Err(ConfigError::invalid("kpca.coef0", "must be finite"));
        }
        let fit = positive("kpca.max_fit_frames", k.max_fit_frames)?;
        if fit < k.out_dim as usize + 1 {
            return Err(ConfigError::invalid("kpca.max_fit_frames", "must exceed kpca.out_dim"));
        }
        if self.kpca.gamma == 0.0 {
            self.kpca.gamma = 1.0 / (crate::dataio::EEG_CHANNELS * STATS_PER_CHANNEL) as f64;
        }

        self.acoustic
            .validate(crate::dataio::MODEL_AUDIO_RATE_HZ)
            .map_err(|err| ConfigError::invalid("acoustic", err.to_string()))?;

        let s = &self.synthesis;
        positive("synthesis.filters1", s.filters1)?;
        positive("synthesis.filters2", s.filters2)?;
        positive("synthesis.kernel", s.kernel)?;
        positive("synthesis.dilation", s.dilation)?;
        positive("synthesis.upsample1", s.upsample1)?;
        positive("synthesis.upsample2", s.upsample2)?;
        if s.upsample1 * s.upsample2 != crate::nn::SYNTH_UPSAMPLE as i64 {
            return Err(ConfigError::invalid(
                "synthesis.upsample2",
                format!(
                    "upsample1 × upsample2 must be {} (1 kHz EEG to 15 kHz audio), got {}",
                    crate::nn::SYNTH_UPSAMPLE,
                    s.upsample1 * s.upsample2
                ),
            ));
        }
        unit_interval("synthesis.dropout", s.dropout)?;
        positive("synthesis.epochs", s.epochs)?;
        positive("synthesis.batch_size", s.batch_size)?;
        finite_positive("synthesis.lr", s.lr)?;

        let r = &self.regression;
        positive("regression.hidden", r.hidden)?;
        unit_interval("regression.dropout", r.dropout)?;
        positive("regression.epochs", r.epochs)?;
        positive("regression.batch_size", r.batch_size)?;
        finite_positive("regression.lr", r.lr)?;
        if !r.grouping.refines(self.kpca.grouping) {
            return Err(ConfigError::invalid(
                "regression.grouping",
                "must be at least as fine as kpca.grouping (each KPCA group has its own feature space)",
            ));
        }

        let p = &self.report;
        let fft = positive("report.spectrogram_fft", p.spectrogram_fft)?;
        if fft < 16 || !fft.is_power_of_two() {
            return Err(ConfigError::invalid("report.spectrogram_fft", "must be a power of two >= 16"));
        }
        positive("report.spectrogram_hop", p.spectrogram_hop)?;
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.run.out_dir)
    }

    pub fn data_root(&self) -> PathBuf {
        PathBuf::from(&self.run.data_root)
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.data.train_ratio,
            val: self.data.val_ratio,
            test: self.data.test_ratio,
        }
    }

    pub fn preprocess_options(&self, ica_seed: u64) -> PreprocessOptions {
        let e = &self.eeg;
        PreprocessOptions {
            bandpass: e
                .bandpass
                .then_some((e.bandpass_order as usize, e.bandpass_lo_hz, e.bandpass_hi_hz)),
            notch: e.notch.then_some((e.notch_hz, e.notch_q)),
            ica: e.ica.then_some(IcaOptions {
                kurtosis_threshold: e.ica_kurtosis_threshold,
                max_iter: e.ica_max_iter as usize,
                tol: e.ica_tol,
                seed: ica_seed,
            }),
            zscore: e.zscore,
        }
    }

    pub fn stat_grid(&self) -> FrameGrid {
        frame_grid_for_rate(EEG_RATE_HZ, self.eeg.feature_rate_hz)
            .and_then(|g| g.with_window(self.eeg.stat_window as usize))
            .expect("validated in resolve")
    }

    pub fn kernel(&self) -> KernelParams {
        KernelParams {
            degree: self.kpca.degree as u32,
            gamma: self.kpca.gamma,
            coef0: self.kpca.coef0,
        }
    }

    pub fn synthesis_model(&self) -> SynthesisConfig {
        let s = &self.synthesis;
        SynthesisConfig {
            filters1: s.filters1 as usize,
            filters2: s.filters2 as usize,
            kernel: s.kernel as usize,
            dilation: s.dilation as usize,
            residual: s.residual,
            upsample1: s.upsample1 as usize,
            upsample2: s.upsample2 as usize,
            upsample_mode: s.upsample_mode,
            dropout: s.dropout,
            head_before_final_upsample: s.head_before_final_upsample,
            ..SynthesisConfig::default()
        }
    }

    pub fn synthesis_train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.synthesis.epochs as usize,
            batch_size: self.synthesis.batch_size as usize,
            adam: AdamConfig {
                lr: self.synthesis.lr,
                ..AdamConfig::default()
            },
            seed,
            shuffle: true,
        }
    }

    pub fn regression_model(&self, out_dim: usize) -> RegressionConfig {
        RegressionConfig {
            input_dim: self.kpca.out_dim as usize,
            hidden: self.regression.hidden as usize,
            dropout: self.regression.dropout,
            out_dim,
        }
    }

    pub fn regression_train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.regression.epochs as usize,
            batch_size: self.regression.batch_size as usize,
            adam: AdamConfig {
                lr: self.regression.lr,
                ..AdamConfig::default()
            },
            seed,
            shuffle: true,
        }
    }

    /// SHA-256 of the resolved configuration with the filesystem locations
    /// blanked, so identical experiments in different directories share a
    /// hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out_dir.clear();
        c.run.data_root.clear();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    /// Writes the resolved configuration to `{out_dir}/config.resolved.toml`.
    pub fn echo(&self) -> std::io::Result<PathBuf> {
        let dir = self.out_dir();
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_toml())?;
        Ok(path)
    }
}
