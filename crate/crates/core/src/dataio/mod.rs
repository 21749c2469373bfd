//! Dataset model: paired EEG/audio trials, their on-disk formats, the
//! dataset manifest and deterministic train/val/test splitting.

mod eeg_io;
mod split;
mod synth;
mod wav;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use eeg_io::{channel_names, read_eeg, read_eeg_bin, read_eeg_csv, write_eeg};
pub use split::{make_split, SplitAssignment, SplitRatios};
pub use synth::{
    generate_synthetic_dataset, synthesize_trial, trial_identity, SynthConfig, SynthTrial,
    CARRIER_HZ,
};
pub use wav::{dequantize_sample, quantize_sample, read_wav, write_wav};

pub const EEG_CHANNELS: usize = 31;
pub const EEG_RATE_HZ: u32 = 1000;
pub const AUDIO_RATE_HZ: u32 = 16000;
pub const MODEL_AUDIO_RATE_HZ: u32 = 15000;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Wav { path: PathBuf, message: String },
    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),
    #[error("{path}: csv error: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}:{line}: wrong column count (expected {expected}, got {got})")]
    WrongColumnCount {
        path: PathBuf,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path}:{line}: non-numeric cell {cell:?} in column {column}")]
    NonNumeric {
        path: PathBuf,
        line: usize,
        column: usize,
        cell: String,
    },
    #[error("{0}: empty file")]
    EmptyFile(PathBuf),
    #[error("malformed binary EEG: {0}")]
    MalformedBinary(String),
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("invalid synthetic dataset request: {0}")]
    Synth(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn wav(path: &Path, e: hound::Error) -> Self {
        DataError::Wav {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    fn csv(path: &Path, e: csv::Error) -> Self {
        DataError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub sample_rate_hz: u32,
    pub samples: Vec<f64>,
}

impl AudioClip {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.sample_rate_hz == 0 {
            return Err(DataError::InvalidRecording("audio sample rate is zero".into()));
        }
        if self.samples.is_empty() {
            return Err(DataError::InvalidRecording("audio clip is empty".into()));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(DataError::InvalidRecording(format!(
                "audio sample {i} = {} outside [-1, 1]",
                self.samples[i]
            )));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Channel-major EEG samples in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    data: Array2<f64>,
    sample_rate_hz: u32,
}

impl EegRecording {
    pub fn new(data: Array2<f64>, sample_rate_hz: u32) -> Result<Self, DataError> {
        if data.nrows() != EEG_CHANNELS {
            return Err(DataError::InvalidRecording(format!(
                "expected {EEG_CHANNELS} channels, got {}",
                data.nrows()
            )));
        }
        if data.ncols() == 0 {
            return Err(DataError::InvalidRecording("recording has no samples".into()));
        }
        if sample_rate_hz == 0 {
            return Err(DataError::InvalidRecording("sample rate is zero".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DataError::InvalidRecording("non-finite EEG sample".into()));
        }
        Ok(EegRecording {
            data: data.as_standard_layout().into_owned(),
            sample_rate_hz,
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.samples() as f64 / self.sample_rate_hz as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Spoken,
    Listen,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Spoken => "spoken",
            Condition::Listen => "listen",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spoken" => Ok(Condition::Spoken),
            "listen" => Ok(Condition::Listen),
            other => Err(format!("unknown condition {other:?} (spoken|listen)")),
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One utterance: EEG and audio recorded together.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub id: String,
    pub subject: u8,
    pub condition: Condition,
    pub eeg: EegRecording,
    pub audio: AudioClip,
    pub transcript: Option<String>,
}

/// Manifest row; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub subject: u8,
    pub condition: Condition,
    pub eeg_path: String,
    pub wav_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub trials: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
const MAX_DURATION_MISMATCH_S: f64 = 0.1;

impl DatasetManifest {
    /// Loads a JSON manifest and checks ids are unique and files exist.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let trials: Vec<ManifestEntry> = serde_json::from_str(&text)
            .map_err(|e| DataError::Manifest(format!("{}: {e}", path.display())))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let manifest = DatasetManifest { root, trials };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for t in &self.trials {
            if !seen.insert(t.id.as_str()) {
                return Err(DataError::Manifest(format!("duplicate trial id {:?}", t.id)));
            }
            if !(1..=4).contains(&t.subject) {
                return Err(DataError::Manifest(format!(
                    "trial {:?}: subject {} outside 1-4",
                    t.id, t.subject
                )));
            }
            for p in [&t.eeg_path, &t.wav_path] {
                let full = self.root.join(p);
                if !full.is_file() {
                    return Err(DataError::Manifest(format!(
                        "trial {:?}: missing file {}",
                        t.id,
                        full.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let text = serde_json::to_string_pretty(&self.trials)
            .map_err(|e| DataError::Manifest(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| DataError::io(path, e))
    }

    pub fn ids(&self) -> Vec<String> {
        self.trials.iter().map(|t| t.id.clone()).collect()
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.trials.iter().find(|t| t.id == id)
    }

    pub fn eeg_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.eeg_path)
    }

    pub fn wav_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.wav_path)
    }

    /// Reads both files of a trial and checks that their durations agree.
    pub fn load_trial(&self, entry: &ManifestEntry) -> Result<TrialRecord, DataError> {
        let eeg = read_eeg(&self.eeg_path(entry))?;
        let audio = read_wav(&self.wav_path(entry))?;
        let gap = (eeg.duration_s() - audio.duration_s()).abs();
        if gap > MAX_DURATION_MISMATCH_S {
            return Err(DataError::InvalidRecording(format!(
                "trial {:?}: EEG lasts {:.3} s but audio {:.3} s",
                entry.id,
                eeg.duration_s(),
                audio.duration_s()
            )));
        }
        Ok(TrialRecord {
            id: entry.id.clone(),
            subject: entry.subject,
            condition: entry.condition,
            eeg,
            audio,
            transcript: entry.transcript.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recording_invariants() {
        assert!(EegRecording::new(Array2::zeros((30, 10)), 1000).is_err());
        assert!(EegRecording::new(Array2::zeros((31, 0)), 1000).is_err());
        let mut d = Array2::zeros((31, 10));
        d[[3, 4]] = f64::NAN;
        assert!(EegRecording::new(d, 1000).is_err());
        let r = EegRecording::new(Array2::zeros((31, 2000)), 1000).unwrap();
        assert_eq!(r.duration_s(), 2.0);
    }

    #[test]
    fn audio_invariants() {
        let ok = AudioClip {
            sample_rate_hz: 16000,
            samples: vec![1.0, -1.0, 0.0],
        };
        assert!(ok.validate().is_ok());
        let loud = AudioClip {
            sample_rate_hz: 16000,
            samples: vec![1.5],
        };
        assert!(loud.validate().is_err());
        let empty = AudioClip {
            sample_rate_hz: 16000,
            samples: vec![],
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn manifest_rejects_duplicates_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_trials: 3,
            duration_s: 0.5,
            seed: 1,
        };
        let m = generate_synthetic_dataset(&cfg, dir.path()).unwrap();
        let loaded = DatasetManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded, m);

        let mut dup = m.clone();
        dup.trials[1].id = dup.trials[0].id.clone();
        assert!(dup.validate().unwrap_err().to_string().contains("duplicate"));

        let mut missing = m.clone();
        missing.trials[2].wav_path = "nope.wav".into();
        assert!(missing.validate().unwrap_err().to_string().contains("missing file"));
    }

    #[test]
    fn load_trial_checks_duration() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_trials: 1,
            duration_s: 1.0,
            seed: 3,
        };
        let m = generate_synthetic_dataset(&cfg, dir.path()).unwrap();
        let trial = m.load_trial(&m.trials[0]).unwrap();
        assert_eq!(trial.eeg.samples(), 1000);
        assert_eq!(trial.audio.samples.len(), 16000);

        let short = AudioClip {
            sample_rate_hz: 16000,
            samples: vec![0.0; 8000],
        };
        write_wav(&m.wav_path(&m.trials[0]), &short).unwrap();
        assert!(m.load_trial(&m.trials[0]).is_err());
    }
}
