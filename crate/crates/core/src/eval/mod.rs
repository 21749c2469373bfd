//! RMSE metrics, per-subject evaluation tables and spectrogram export.

mod spectrogram;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::acoustic::FeatureKind;
use crate::dataio::Condition;
use crate::nn::{predict_one, NnError, RegressionModel, SeqModel};

pub use spectrogram::{export_spectrogram, log_power_db, SpectrogramExport, DB_FLOOR};

/// Output samples by which a synthesis prediction may differ from its
/// target before a warning is logged.
pub const LENGTH_TOLERANCE: usize = 15;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {pred} vs {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("no model for acoustic kind {0}")]
    MissingKind(String),
    #[error("trial {trial}: {message}")]
    Trial { trial: String, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// `sqrt(mean((pred − truth)²))`.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Synthesis,
    Acoustic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub subject: u8,
    pub condition: Condition,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kind: Option<String>,
    pub rmse: f64,
    /// RMSE of predicting the training-set mean everywhere.
    pub baseline_rmse: f64,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub id: String,
    pub subject: u8,
    pub condition: Condition,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kind: Option<String>,
    pub rmse: f64,
    pub baseline_rmse: f64,
}

/// Run provenance. Only `timestamps` varies between identical runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub config_hash: String,
    /// How targets were scaled before RMSE was taken.
    pub rmse_scale: String,
    pub timestamps: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scope: Scope,
    pub rows: Vec<MetricsRow>,
    pub trials: Vec<TrialScore>,
    pub metadata: ReportMetadata,
}

impl MetricsReport {
    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(io_err(path))
    }

    pub fn read_json(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })
    }

    /// `subject,condition,kind,rmse,baseline_rmse,n_trials`.
    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let io = io_err(path);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(&io)?);
        writeln!(w, "subject,condition,kind,rmse,baseline_rmse,n_trials").map_err(&io)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.subject,
                r.condition,
                r.kind.as_deref().unwrap_or(""),
                r.rmse,
                r.baseline_rmse,
                r.n_trials
            )
            .map_err(&io)?;
        }
        w.flush().map_err(&io)
    }

    pub fn row(&self, subject: u8, condition: Condition, kind: Option<&str>) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.subject == subject && r.condition == condition && r.kind.as_deref() == kind)
    }
}

/// A test trial for waveform synthesis: `input` is `T × 31` EEG, `target`
/// the audio on the training scale.
#[derive(Debug, Clone)]
pub struct SynthesisTrial {
    pub id: String,
    pub subject: u8,
    pub condition: Condition,
    pub input: Array2<f64>,
    pub target: Vec<f64>,
}

/// Per-trial waveform RMSE (prediction and target truncated to their
/// overlap), averaged per subject × condition. The baseline predicts
/// `baseline_mean` at every sample.
pub fn evaluate_synthesis<M: SeqModel>(
    model: &M,
    trials: &[SynthesisTrial],
    baseline_mean: f64,
    metadata: ReportMetadata,
) -> Result<MetricsReport, EvalError> {
    if trials.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut scores = Vec::with_capacity(trials.len());
    for t in trials {
        let pred = predict_one(model, &t.input)?;
        let pred = pred.column(0).to_vec();
        let n = pred.len().min(t.target.len());
        if pred.len().abs_diff(t.target.len()) > LENGTH_TOLERANCE {
            log::warn!(
                "trial {}: prediction has {} samples, target {}; scoring the first {n}",
                t.id,
                pred.len(),
                t.target.len()
            );
        }
        if n == 0 {
            return Err(EvalError::Trial {
                trial: t.id.clone(),
                message: "no overlapping samples".into(),
            });
        }
        let base = vec![baseline_mean; n];
        scores.push(TrialScore {
            id: t.id.clone(),
            subject: t.subject,
            condition: t.condition,
            kind: None,
            rmse: rmse(&pred[..n], &t.target[..n])?,
            baseline_rmse: rmse(&base, &t.target[..n])?,
        });
    }
    let mut groups: BTreeMap<(u8, Condition), Vec<&TrialScore>> = BTreeMap::new();
    for s in &scores {
        groups.entry((s.subject, s.condition)).or_default().push(s);
    }
    let rows = groups
        .into_iter()
        .map(|((subject, condition), g)| {
            let n = g.len() as f64;
            MetricsRow {
                subject,
                condition,
                kind: None,
                rmse: g.iter().map(|s| s.rmse).sum::<f64>() / n,
                baseline_rmse: g.iter().map(|s| s.baseline_rmse).sum::<f64>() / n,
                n_trials: g.len(),
            }
        })
        .collect();
    Ok(MetricsReport {
        scope: Scope::Synthesis,
        rows,
        trials: scores,
        metadata,
    })
}

/// A test trial for acoustic regression: `input` is `T × 30` EEG features,
/// `targets` the per-kind acoustic features (`T × dim`, training scale).
#[derive(Debug, Clone)]
pub struct AcousticTrial {
    pub id: String,
    pub subject: u8,
    pub condition: Condition,
    pub input: Array2<f64>,
    pub targets: BTreeMap<FeatureKind, Array2<f64>>,
}

#[derive(Default)]
struct Pool {
    ss: f64,
    base_ss: f64,
    count: usize,
    trials: usize,
}

/// RMSE per kind, pooled over every test frame and feature dimension of a
/// subject × condition; 16 rows per group in f1..f16 order. The baseline
/// predicts `baselines[kind]` (the training mean vector) at every frame.
pub fn evaluate_acoustic(
    models: &BTreeMap<FeatureKind, RegressionModel>,
    baselines: &BTreeMap<FeatureKind, Vec<f64>>,
    trials: &[AcousticTrial],
    metadata: ReportMetadata,
) -> Result<MetricsReport, EvalError> {
    if trials.is_empty() {
        return Err(EvalError::Empty);
    }
    for kind in FeatureKind::ALL {
        if !models.contains_key(&kind) || !baselines.contains_key(&kind) {
            return Err(EvalError::MissingKind(kind.label()));
        }
    }
    let mut pools: BTreeMap<(u8, Condition, FeatureKind), Pool> = BTreeMap::new();
    let mut scores = Vec::new();
    for t in trials {
        for kind in FeatureKind::ALL {
            let truth = t.targets.get(&kind).ok_or_else(|| EvalError::Trial {
                trial: t.id.clone(),
                message: format!("missing {} targets", kind.label()),
            })?;
            let pred = predict_one(&models[&kind], &t.input)?;
            let base = &baselines[&kind];
            if pred.ncols() != truth.ncols() || base.len() != truth.ncols() {
                return Err(EvalError::Trial {
                    trial: t.id.clone(),
                    message: format!("{} width mismatch", kind.label()),
                });
            }
            let frames = pred.nrows().min(truth.nrows());
            if frames == 0 {
                return Err(EvalError::Trial {
                    trial: t.id.clone(),
                    message: "no frames".into(),
                });
            }
            let (mut ss, mut bss) = (0.0, 0.0);
            for m in 0..frames {
                for d in 0..truth.ncols() {
                    let y = truth[[m, d]];
                    ss += (pred[[m, d]] - y).powi(2);
                    bss += (base[d] - y).powi(2);
                }
            }
            let count = frames * truth.ncols();
            scores.push(TrialScore {
                id: t.id.clone(),
                subject: t.subject,
                condition: t.condition,
                kind: Some(kind.label()),
                rmse: (ss / count as f64).sqrt(),
                baseline_rmse: (bss / count as f64).sqrt(),
            });
            let p = pools.entry((t.subject, t.condition, kind)).or_default();
            p.ss += ss;
            p.base_ss += bss;
            p.count += count;
            p.trials += 1;
        }
    }
    let rows = pools
        .into_iter()
        .map(|((subject, condition, kind), p)| MetricsRow {
            subject,
            condition,
            kind: Some(kind.label()),
            rmse: (p.ss / p.count as f64).sqrt(),
            baseline_rmse: (p.base_ss / p.count as f64).sqrt(),
            n_trials: p.trials,
        })
        .collect();
    Ok(MetricsReport {
        scope: Scope::Acoustic,
        rows,
        trials: scores,
        metadata,
    })
}
