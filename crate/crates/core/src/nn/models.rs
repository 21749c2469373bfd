//! The waveform synthesis network and the acoustic-feature regressor.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{Ctx, Dense, Dropout, Gru, Layer, NnError, ParamView, Params, TcnBlock, Upsample, UpsampleMode};
use crate::acoustic::FeatureKind;
use crate::seed::{stage_rng, Stage};

/// Total time upsampling of the synthesis model (1 kHz EEG → 15 kHz audio).
pub const SYNTH_UPSAMPLE: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    pub input_dim: usize,
    pub filters1: usize,
    pub filters2: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub residual: bool,
    pub upsample1: usize,
    pub upsample2: usize,
    pub upsample_mode: UpsampleMode,
    pub dropout: f64,
    /// Apply the dense head before the final upsampling instead of after.
    pub head_before_final_upsample: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            input_dim: 31,
            filters1: 256,
            filters2: 32,
            kernel: 3,
            dilation: 1,
            residual: true,
            upsample1: 5,
            upsample2: 3,
            upsample_mode: UpsampleMode::Repeat,
            dropout: 0.2,
            head_before_final_upsample: false,
        }
    }
}

impl SynthesisConfig {
    /// Closed-form parameter count of the model this config builds.
    pub fn param_count(&self) -> usize {
        let tcn = |i: usize, o: usize| {
            let proj = if self.residual && i != o { i * o + o } else { 0 };
            self.kernel * i * o + o + proj
        };
        tcn(self.input_dim, self.filters1) + tcn(self.filters1, self.filters2) + self.filters2 + 1
    }

    pub fn time_factor(&self) -> usize {
        self.upsample1 * self.upsample2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub out_dim: usize,
}

impl RegressionConfig {
    pub fn for_kind(kind: FeatureKind) -> Self {
        RegressionConfig {
            input_dim: 30,
            hidden: 128,
            dropout: 0.2,
            out_dim: kind.dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        3 * (self.input_dim * self.hidden + self.hidden * self.hidden + self.hidden) + self.hidden * self.out_dim + self.out_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelConfig {
    Synthesis(SynthesisConfig),
    Regression(RegressionConfig),
}

/// A trainable sequence model: a [`Layer`] with fixed input/output widths
/// and a fixed time scaling between them.
pub trait SeqModel: Layer {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Output steps per input step.
    fn time_factor(&self) -> usize;
    fn config(&self) -> ModelConfig;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisModel {
    pub cfg: SynthesisConfig,
    pub tcn1: TcnBlock,
    pub up1: Upsample,
    pub drop: Dropout,
    pub tcn2: TcnBlock,
    pub up2: Upsample,
    pub head: Dense,
}

/// TCN(in→filters1) → up×upsample1 → dropout → TCN(filters1→filters2) →
/// up×upsample2 → dense(filters2→1); initialized from the `Init` stage of
/// `seed`.
pub fn build_synthesis_model(cfg: &SynthesisConfig, seed: u64) -> Result<SynthesisModel, NnError> {
    if cfg.input_dim == 0 {
        return Err(NnError::Config("synthesis input_dim must be positive".into()));
    }
    let mut rng = stage_rng(seed, Stage::Init, "synthesis");
    Ok(SynthesisModel {
        cfg: cfg.clone(),
        tcn1: TcnBlock::new("tcn1", cfg.input_dim, cfg.filters1, cfg.kernel, cfg.dilation, cfg.residual, &mut rng)?,
        up1: Upsample::new(cfg.upsample1, cfg.upsample_mode)?,
        drop: Dropout::new(cfg.dropout)?,
        tcn2: TcnBlock::new("tcn2", cfg.filters1, cfg.filters2, cfg.kernel, cfg.dilation, cfg.residual, &mut rng)?,
        up2: Upsample::new(cfg.upsample2, cfg.upsample_mode)?,
        head: Dense::new("head", cfg.filters2, 1, &mut rng)?,
    })
}

type SynthCache = (
    <TcnBlock as Layer>::Cache,
    <Dropout as Layer>::Cache,
    <TcnBlock as Layer>::Cache,
    <Dense as Layer>::Cache,
);

impl Params for SynthesisModel {
    fn params(&self) -> Vec<ParamView<'_>> {
        let mut v = self.tcn1.params();
        v.extend(self.tcn2.params());
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.tcn1.params_mut();
        v.extend(self.tcn2.params_mut());
        v.extend(self.head.params_mut());
        v
    }
}

impl Layer for SynthesisModel {
    type Cache = SynthCache;

    fn forward(&self, x: &Array3<f64>, ctx: &mut Ctx) -> Result<(Array3<f64>, SynthCache), NnError> {
        let (h, c1) = self.tcn1.forward(x, ctx)?;
        let (h, _) = self.up1.forward(&h, ctx)?;
        let (h, cd) = self.drop.forward(&h, ctx)?;
        let (h, c2) = self.tcn2.forward(&h, ctx)?;
        let (y, ch) = if self.cfg.head_before_final_upsample {
            let (h, ch) = self.head.forward(&h, ctx)?;
            (self.up2.forward(&h, ctx)?.0, ch)
        } else {
            let (h, _) = self.up2.forward(&h, ctx)?;
            self.head.forward(&h, ctx)?
        };
        Ok((y, (c1, cd, c2, ch)))
    }

    fn backward(&self, cache: &SynthCache, dy: &Array3<f64>, g: &mut Self) -> Array3<f64> {
        let (c1, cd, c2, ch) = cache;
        let d = if self.cfg.head_before_final_upsample {
            let d = self.up2.backward(&(), dy, &mut g.up2);
            self.head.backward(ch, &d, &mut g.head)
        } else {
            let d = self.head.backward(ch, dy, &mut g.head);
            self.up2.backward(&(), &d, &mut g.up2)
        };
        let d = self.tcn2.backward(c2, &d, &mut g.tcn2);
        let d = self.drop.backward(cd, &d, &mut g.drop);
        let d = self.up1.backward(&(), &d, &mut g.up1);
        self.tcn1.backward(c1, &d, &mut g.tcn1)
    }

    fn zeros_like(&self) -> Self {
        SynthesisModel {
            cfg: self.cfg.clone(),
            tcn1: self.tcn1.zeros_like(),
            up1: self.up1,
            drop: self.drop,
            tcn2: self.tcn2.zeros_like(),
            up2: self.up2,
            head: self.head.zeros_like(),
        }
    }
}

impl SeqModel for SynthesisModel {
    fn input_dim(&self) -> usize {
        self.cfg.input_dim
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn time_factor(&self) -> usize {
        self.cfg.time_factor()
    }

    fn config(&self) -> ModelConfig {
        ModelConfig::Synthesis(self.cfg.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub cfg: RegressionConfig,
    pub gru: Gru,
    pub drop: Dropout,
    pub head: Dense,
}

/// GRU(in→hidden) → dropout → dense(hidden→out_dim). `out_dim` must be the
/// width of one of the acoustic feature kinds.
pub fn build_regression_model(cfg: &RegressionConfig, seed: u64) -> Result<RegressionModel, NnError> {
    if !FeatureKind::ALL.iter().any(|k| k.dim() == cfg.out_dim) {
        return Err(NnError::Config(format!(
            "regression out_dim {} is not the width of any acoustic feature kind",
            cfg.out_dim
        )));
    }
    let mut rng = stage_rng(seed, Stage::Init, "regression");
    Ok(RegressionModel {
        cfg: cfg.clone(),
        gru: Gru::new("gru", cfg.input_dim, cfg.hidden, &mut rng)?,
        drop: Dropout::new(cfg.dropout)?,
        head: Dense::new("head", cfg.hidden, cfg.out_dim, &mut rng)?,
    })
}

type RegressCache = (<Gru as Layer>::Cache, <Dropout as Layer>::Cache, <Dense as Layer>::Cache);

impl Params for RegressionModel {
    fn params(&self) -> Vec<ParamView<'_>> {
        let mut v = self.gru.params();
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.gru.params_mut();
        v.extend(self.head.params_mut());
        v
    }
}

impl Layer for RegressionModel {
    type Cache = RegressCache;

    fn forward(&self, x: &Array3<f64>, ctx: &mut Ctx) -> Result<(Array3<f64>, RegressCache), NnError> {
        let (h, cg) = self.gru.forward(x, ctx)?;
        let (h, cd) = self.drop.forward(&h, ctx)?;
        let (y, ch) = self.head.forward(&h, ctx)?;
        Ok((y, (cg, cd, ch)))
    }

    fn backward(&self, cache: &RegressCache, dy: &Array3<f64>, g: &mut Self) -> Array3<f64> {
        let d = self.head.backward(&cache.2, dy, &mut g.head);
        let d = self.drop.backward(&cache.1, &d, &mut g.drop);
        self.gru.backward(&cache.0, &d, &mut g.gru)
    }

    fn zeros_like(&self) -> Self {
        RegressionModel {
            cfg: self.cfg.clone(),
            gru: self.gru.zeros_like(),
            drop: self.drop,
            head: self.head.zeros_like(),
        }
    }
}

impl SeqModel for RegressionModel {
    fn input_dim(&self) -> usize {
        self.cfg.input_dim
    }

    fn output_dim(&self) -> usize {
        self.cfg.out_dim
    }

    fn time_factor(&self) -> usize {
        1
    }

    fn config(&self) -> ModelConfig {
        ModelConfig::Regression(self.cfg.clone())
    }
}

/// Either model, as restored from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Synthesis(SynthesisModel),
    Regression(RegressionModel),
}

impl AnyModel {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self, NnError> {
        Ok(match cfg {
            ModelConfig::Synthesis(c) => AnyModel::Synthesis(build_synthesis_model(c, seed)?),
            ModelConfig::Regression(c) => AnyModel::Regression(build_regression_model(c, seed)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            AnyModel::Synthesis(m) => m.config(),
            AnyModel::Regression(m) => m.config(),
        }
    }

    pub fn params(&self) -> Vec<ParamView<'_>> {
        match self {
            AnyModel::Synthesis(m) => m.params(),
            AnyModel::Regression(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            AnyModel::Synthesis(m) => m.params_mut(),
            AnyModel::Regression(m) => m.params_mut(),
        }
    }
}
