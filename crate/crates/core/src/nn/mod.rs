//! A small sequence-network engine with exact backward passes.
//!
//! Tensors are `batch × time × feature` arrays in f64. Every layer caches
//! what it needs during `forward` and returns the input gradient from
//! `backward`, accumulating parameter gradients into a zero-initialized
//! copy of itself.

mod adam;
mod checkpoint;
mod gradcheck;
mod gru;
mod layers;
mod loss;
mod models;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use gradcheck::{
    check_layer, check_mse, check_model, gradient_suite, relative_error, GradCheckReport, SuiteEntry, FD_EPS,
};
pub use gru::Gru;
pub use layers::{Dense, Dropout, TcnBlock, Upsample, UpsampleMode};
pub use loss::mse_loss;
pub use models::{
    build_regression_model, build_synthesis_model, AnyModel, ModelConfig, RegressionConfig, RegressionModel,
    SeqModel, SynthesisConfig, SynthesisModel, SYNTH_UPSAMPLE,
};
pub use train::{
    evaluate_loss, predict, predict_one, train, train_until, train_with_callback, Batch, EpochRecord, SeqPair, TrainConfig,
    TrainHistory,
};

use ndarray::Array3;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("empty mask: no valid entries to average")]
    EmptyMask,
    #[error("no training pairs")]
    EmptyTrainingSet,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Forward-pass context: training flag and the dropout stream.
pub struct Ctx {
    pub training: bool,
    pub rng: Option<ChaCha8Rng>,
}

impl Ctx {
    pub fn inference() -> Self {
        Ctx {
            training: false,
            rng: None,
        }
    }

    pub fn training(rng: ChaCha8Rng) -> Self {
        Ctx {
            training: true,
            rng: Some(rng),
        }
    }
}

/// Read-only view of one named parameter tensor.
pub struct ParamView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Uniform access to a module's parameters, in a fixed order.
pub trait Params {
    fn params(&self) -> Vec<ParamView<'_>>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }
}

/// A differentiable `batch × time × feature` transform.
pub trait Layer: Params + Clone {
    type Cache;

    fn forward(&self, x: &Array3<f64>, ctx: &mut Ctx) -> Result<(Array3<f64>, Self::Cache), NnError>;

    /// Returns `dL/dx` and adds parameter gradients into `grads`.
    fn backward(&self, cache: &Self::Cache, dy: &Array3<f64>, grads: &mut Self) -> Array3<f64>;

    /// Same structure with every parameter zero.
    fn zeros_like(&self) -> Self;
}

pub(crate) fn view<'a>(prefix: &str, name: &str, shape: &[usize], data: &'a [f64]) -> ParamView<'a> {
    ParamView {
        name: if prefix.is_empty() {
            name.to_string()
        } else {
            format!("{prefix}.{name}")
        },
        shape: shape.to_vec(),
        data,
    }
}
