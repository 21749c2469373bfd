//! End-to-end batch pipeline: every stage reads its inputs from and writes
//! its outputs under the run's output directory, so stages can be rerun
//! independently and in separate processes.

mod config;
mod stages;
mod store;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::Value;

use crate::acoustic::{AcousticError, FeatureKind};
use crate::dataio::{Condition, DataError};
use crate::eeg::EegError;
use crate::eval::EvalError;
use crate::nn::NnError;

pub use config::{
    ConfigError, DataSection, EegSection, Grouping, KpcaSection, RegressionSection, ReportSection,
    read_config, RunConfig, RunSection, SynthesisSection, RESOLVED_CONFIG_FILE,
};
pub use stages::{group_key, kinds_beating_baseline, overall_by_kind};
pub use store::{read_matrix, write_matrix, MATRIX_MAGIC};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl PipelineError {
    /// 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) | PipelineError::Config(_) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Numeric(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        PipelineError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DataError> for PipelineError {
    fn from(e: DataError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<EegError> for PipelineError {
    fn from(e: EegError) -> Self {
        match e {
            EegError::NonFinite { .. } => PipelineError::Numeric(e.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<AcousticError> for PipelineError {
    fn from(e: AcousticError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<NnError> for PipelineError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Diverged { .. } => PipelineError::Numeric(e.to_string()),
            NnError::Config(m) => PipelineError::Usage(m),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Nn(n) => n.into(),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    GenData,
    Preprocess,
    ExtractEegFeats,
    FitKpca,
    ExtractAcoustic,
    Split,
    TrainSynth,
    TrainRegress,
    EvalSynth,
    EvalRegress,
    ExportSpectrogram,
    GradCheck,
}

impl Command {
    pub const ALL: [Command; 12] = [
        Command::GenData,
        Command::Preprocess,
        Command::ExtractEegFeats,
        Command::FitKpca,
        Command::ExtractAcoustic,
        Command::Split,
        Command::TrainSynth,
        Command::TrainRegress,
        Command::EvalSynth,
        Command::EvalRegress,
        Command::ExportSpectrogram,
        Command::GradCheck,
    ];

    /// Data-producing stages in dependency order (gradient check excluded).
    pub const PIPELINE: [Command; 11] = [
        Command::GenData,
        Command::Preprocess,
        Command::ExtractEegFeats,
        Command::Split,
        Command::FitKpca,
        Command::ExtractAcoustic,
        Command::TrainSynth,
        Command::TrainRegress,
        Command::EvalSynth,
        Command::EvalRegress,
        Command::ExportSpectrogram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Preprocess => "preprocess",
            Command::ExtractEegFeats => "extract-eeg-feats",
            Command::FitKpca => "fit-kpca",
            Command::ExtractAcoustic => "extract-acoustic",
            Command::Split => "split",
            Command::TrainSynth => "train-synth",
            Command::TrainRegress => "train-regress",
            Command::EvalSynth => "eval-synth",
            Command::EvalRegress => "eval-regress",
            Command::ExportSpectrogram => "export-spectrogram",
            Command::GradCheck => "grad-check",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| PipelineError::Usage(format!("unknown command {s:?}")))
    }
}

/// Optional restriction of a command to some trials or one feature kind.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Selection {
    pub subject: Option<u8>,
    pub condition: Option<Condition>,
    pub kind: Option<FeatureKind>,
}

impl Selection {
    pub fn matches(&self, subject: u8, condition: Condition) -> bool {
        self.subject.is_none_or(|s| s == subject) && self.condition.is_none_or(|c| c == condition)
    }
}

/// Where every artifact lives under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    fn file(&self, dir: &str, name: String) -> PathBuf {
        self.root.join(dir).join(name)
    }

    /// Cleaned EEG, channels × samples.
    pub fn clean(&self, id: &str) -> PathBuf {
        self.file("clean", format!("{id}.bin"))
    }

    pub fn preprocess_report(&self) -> PathBuf {
        self.file("clean", "preprocess_report.json".into())
    }

    /// Statistical EEG features, frames × 155.
    pub fn eeg_feats(&self, id: &str) -> PathBuf {
        self.file("eeg_feats", format!("{id}.bin"))
    }

    /// KPCA-reduced EEG features, frames × 30.
    pub fn reduced(&self, id: &str) -> PathBuf {
        self.file("eeg_reduced", format!("{id}.bin"))
    }

    pub fn kpca_model(&self, group: &str) -> PathBuf {
        self.file("kpca", format!("{group}.json"))
    }

    pub fn kpca_scaler(&self, group: &str) -> PathBuf {
        self.file("kpca", format!("{group}_scaler.json"))
    }

    pub fn kpca_curve(&self, group: &str) -> PathBuf {
        self.file("kpca", format!("{group}_explained_variance.csv"))
    }

    /// Audio at the model rate, samples × 1.
    pub fn audio15k(&self, id: &str) -> PathBuf {
        self.file("audio15k", format!("{id}.bin"))
    }

    /// All sixteen acoustic kinds concatenated, frames × 571.
    pub fn acoustic(&self, id: &str) -> PathBuf {
        self.file("acoustic", format!("{id}.bin"))
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn synth_checkpoint(&self, group: &str) -> PathBuf {
        self.file("models", format!("synth_{group}.ckpt"))
    }

    pub fn synth_history(&self, group: &str) -> PathBuf {
        self.file("models", format!("synth_{group}_history.csv"))
    }

    pub fn regress_checkpoint(&self, group: &str, kind: FeatureKind) -> PathBuf {
        self.file("models", format!("regress_{group}_{}.ckpt", kind.label()))
    }

    pub fn regress_history(&self, group: &str, kind: FeatureKind) -> PathBuf {
        self.file("models", format!("regress_{group}_{}_history.csv", kind.label()))
    }

    /// Predicted test waveform, samples × 1.
    pub fn prediction(&self, id: &str) -> PathBuf {
        self.file("predictions", format!("{id}.bin"))
    }

    pub fn metrics(&self, scope: &str, ext: &str) -> PathBuf {
        self.root.join(format!("metrics_{scope}.{ext}"))
    }

    pub fn spectrogram_prefix(&self, id: &str, which: &str) -> PathBuf {
        self.file("spectrograms", format!("{id}_{which}"))
    }
}

/// Runs one command and returns its JSON summary. The resolved config is
/// echoed to the output directory first.
pub fn run(cmd: Command, cfg: &RunConfig, sel: &Selection) -> Result<Value, PipelineError> {
    if sel.kind.is_some() && cmd != Command::TrainRegress {
        return Err(PipelineError::Usage(format!("--kind applies to train-regress only, not {cmd}")));
    }
    cfg.echo().map_err(|e| PipelineError::io(&cfg.out_dir(), e))?;
    let mut summary = match cmd {
        Command::GenData => stages::gen_data(cfg)?,
        Command::Preprocess => stages::preprocess(cfg, sel)?,
        Command::ExtractEegFeats => stages::extract_eeg_feats(cfg, sel)?,
        Command::FitKpca => stages::fit_kpca(cfg, sel)?,
        Command::ExtractAcoustic => stages::extract_acoustic(cfg, sel)?,
        Command::Split => stages::split(cfg)?,
        Command::TrainSynth => stages::train_synth(cfg, sel)?,
        Command::TrainRegress => stages::train_regress(cfg, sel)?,
        Command::EvalSynth => stages::eval_synth(cfg, sel)?,
        Command::EvalRegress => stages::eval_regress(cfg, sel)?,
        Command::ExportSpectrogram => stages::export_spectrograms(cfg, sel)?,
        Command::GradCheck => stages::grad_check(cfg)?,
    };
    if let Value::Object(map) = &mut summary {
        let mut full = serde_json::Map::new();
        full.insert("command".into(), Value::from(cmd.name()));
        full.append(map);
        summary = Value::Object(full);
    }
    Ok(summary)
}

/// Runs every data stage in order.
pub fn run_all(cfg: &RunConfig, sel: &Selection) -> Result<Vec<Value>, PipelineError> {
    Command::PIPELINE.into_iter().map(|c| run(c, cfg, sel)).collect()
}
