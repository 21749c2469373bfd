//! Mini-batch training with length bucketing, and inference.

use std::io::Write;
use std::ops::ControlFlow;
use std::path::Path;

use ndarray::{s, Array2, Array3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{adam_step, mse_loss, AdamConfig, AdamState, Ctx, NnError, SeqModel};
use crate::seed::{stage_rng, Stage};

/// One input/target sequence pair: `input` is `T × in`, `target` is
/// `T' × out` with `T'` ideally `T · time_factor`. Only the overlapping
/// prefix of the target contributes to the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqPair {
    pub input: Array2<f64>,
    pub target: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 100,
            adam: AdamConfig::default(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NnError::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(NnError::Config(format!("learning rate {} must be positive", self.adam.lr)));
        }
        Ok(())
    }
}

/// Zero-padded batch with per-sequence valid output lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Array3<f64>,
    pub y: Array3<f64>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn from_pairs(pairs: &[&SeqPair], time_factor: usize) -> Result<Self, NnError> {
        let first = pairs.first().ok_or(NnError::EmptyTrainingSet)?;
        let (fin, fout) = (first.input.ncols(), first.target.ncols());
        let t_in = pairs.iter().map(|p| p.input.nrows()).max().unwrap_or(0);
        let t_out = t_in * time_factor;
        let mut x = Array3::zeros((pairs.len(), t_in, fin));
        let mut y = Array3::zeros((pairs.len(), t_out, fout));
        let mut lengths = Vec::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            if p.input.ncols() != fin || p.target.ncols() != fout {
                return Err(NnError::Shape("pairs in a batch have different widths".into()));
            }
            let len = p.target.nrows().min(p.input.nrows() * time_factor);
            x.slice_mut(s![i, ..p.input.nrows(), ..]).assign(&p.input);
            y.slice_mut(s![i, ..len, ..]).assign(&p.target.slice(s![..len, ..]));
            lengths.push(len);
        }
        Ok(Batch { x, y, lengths })
    }

    fn count(&self) -> usize {
        self.lengths.iter().sum::<usize>() * self.y.dim().2
    }
}

/// Orders pairs by input length (ties in shuffled order when `rng` is
/// given), cuts them into batches and shuffles the batch order.
fn make_batches<'a>(
    pairs: &'a [SeqPair],
    batch_size: usize,
    rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Vec<Vec<&'a SeqPair>> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = rng;
    if let Some(r) = rng.as_deref_mut() {
        order.shuffle(r);
    }
    order.sort_by_key(|&i| pairs[i].input.nrows());
    let mut batches: Vec<Vec<&SeqPair>> = order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| &pairs[i]).collect())
        .collect();
    if let Some(r) = rng {
        batches.shuffle(r);
    }
    batches
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Entry-weighted mean of the training-mode batch losses of the epoch.
    pub train_loss: f64,
    /// Inference-mode loss on the validation pairs, if any.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn first_train_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.train_loss)
    }

    pub fn last_train_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.train_loss)
    }

    /// CSV `epoch,train_loss,val_loss` preceded by `# key=value` comment
    /// lines from `meta`.
    pub fn write_csv(&self, path: &Path, meta: &[(&str, String)]) -> Result<(), NnError> {
        let io = |source| NnError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for (k, v) in meta {
            writeln!(w, "# {k}={v}").map_err(io)?;
        }
        writeln!(w, "epoch,train_loss,val_loss").map_err(io)?;
        for r in &self.records {
            let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{}", r.epoch, r.train_loss, val).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Masked MSE of `model` on `pairs` in inference mode, weighted by entries.
pub fn evaluate_loss<M: SeqModel>(model: &M, pairs: &[SeqPair], batch_size: usize) -> Result<f64, NnError> {
    let mut sum = 0.0;
    let mut count = 0;
    for chunk in make_batches(pairs, batch_size, None) {
        let b = Batch::from_pairs(&chunk, model.time_factor())?;
        let (y, _) = model.forward(&b.x, &mut Ctx::inference())?;
        let (l, _) = mse_loss(&y, &b.y, Some(&b.lengths))?;
        sum += l * b.count() as f64;
        count += b.count();
    }
    if count == 0 {
        return Err(NnError::EmptyMask);
    }
    Ok(sum / count as f64)
}

/// Trains `model` in place with Adam on masked MSE.
///
/// Each epoch draws its shuffle and dropout streams from the `Shuffle` and
/// `Dropout` stages of `cfg.seed` salted with the epoch number, so a run
/// is fully determined by the seed. A non-finite batch loss aborts with
/// [`NnError::Diverged`].
pub fn train<M: SeqModel>(
    model: &mut M,
    train_pairs: &[SeqPair],
    val_pairs: &[SeqPair],
    cfg: &TrainConfig,
) -> Result<TrainHistory, NnError> {
    train_with_callback(model, train_pairs, val_pairs, cfg, |_| {})
}

/// [`train`] with a hook called after every epoch.
pub fn train_with_callback<M: SeqModel>(
    model: &mut M,
    train_pairs: &[SeqPair],
    val_pairs: &[SeqPair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory, NnError> {
    train_until(model, train_pairs, val_pairs, cfg, |r| {
        on_epoch(r);
        ControlFlow::Continue(())
    })
}

/// [`train`] with a hook that may stop training early by returning
/// `ControlFlow::Break`; the stopping epoch is kept in the history.
pub fn train_until<M: SeqModel>(
    model: &mut M,
    train_pairs: &[SeqPair],
    val_pairs: &[SeqPair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainHistory, NnError> {
    cfg.validate()?;
    if train_pairs.is_empty() {
        return Err(NnError::EmptyTrainingSet);
    }
    for p in train_pairs.iter().chain(val_pairs) {
        if p.input.ncols() != model.input_dim() || p.target.ncols() != model.output_dim() {
            return Err(NnError::Shape(format!(
                "pair widths {}→{} do not fit model {}→{}",
                p.input.ncols(),
                p.target.ncols(),
                model.input_dim(),
                model.output_dim()
            )));
        }
    }
    let sizes: Vec<usize> = model.params().iter().map(|p| p.data.len()).collect();
    let mut adam = AdamState::new(&sizes);
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        let salt = epoch.to_string();
        let mut shuffle_rng = stage_rng(cfg.seed, Stage::Shuffle, &salt);
        let batches = make_batches(train_pairs, cfg.batch_size, cfg.shuffle.then_some(&mut shuffle_rng));
        let mut ctx = Ctx::training(stage_rng(cfg.seed, Stage::Dropout, &salt));
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in batches {
            let b = Batch::from_pairs(&chunk, model.time_factor())?;
            let (y, cache) = model.forward(&b.x, &mut ctx)?;
            let (loss, dy) = match mse_loss(&y, &b.y, Some(&b.lengths)) {
                Err(NnError::EmptyMask) => continue,
                other => other?,
            };
            if !loss.is_finite() {
                return Err(NnError::Diverged { epoch, loss });
            }
            let mut grads = model.zeros_like();
            model.backward(&cache, &dy, &mut grads);
            let gviews = grads.params();
            let gslices: Vec<&[f64]> = gviews.iter().map(|v| v.data).collect();
            adam_step(&mut model.params_mut(), &gslices, &mut adam, &cfg.adam)?;
            sum += loss * b.count() as f64;
            count += b.count();
        }
        if count == 0 {
            return Err(NnError::EmptyMask);
        }
        let train_loss = sum / count as f64;
        let val_loss = if val_pairs.is_empty() {
            None
        } else {
            let v = evaluate_loss(model, val_pairs, cfg.batch_size)?;
            if !v.is_finite() {
                return Err(NnError::Diverged { epoch, loss: v });
            }
            Some(v)
        };
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        log::debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:?}");
        let flow = on_epoch(&rec);
        history.records.push(rec);
        if flow.is_break() {
            break;
        }
    }
    Ok(history)
}

/// Inference-mode forward pass on a batch.
pub fn predict<M: SeqModel>(model: &M, x: &Array3<f64>) -> Result<Array3<f64>, NnError> {
    Ok(model.forward(x, &mut Ctx::inference())?.0)
}

/// Inference on one `T × in` sequence.
pub fn predict_one<M: SeqModel>(model: &M, x: &Array2<f64>) -> Result<Array2<f64>, NnError> {
    let (t, f) = x.dim();
    let x3 = x.to_owned().into_shape_with_order((1, t, f)).expect("standard layout");
    let y = predict(model, &x3)?;
    let (_, to, fo) = y.dim();
    Ok(y.into_shape_with_order((to, fo)).expect("standard layout"))
}
