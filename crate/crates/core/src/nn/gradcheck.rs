//! Central finite-difference verification of analytic gradients.

use ndarray::Array3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    build_regression_model, build_synthesis_model, mse_loss, Ctx, Dense, Dropout, Gru, Layer, RegressionConfig,
    SynthesisConfig, TcnBlock, Upsample, UpsampleMode,
};

pub const FD_EPS: f64 = 1e-5;
const MAX_PARAM_COORDS: usize = 200;
const MAX_INPUT_COORDS: usize = 100;
/// Below this magnitude both gradients count as zero, so the error is
/// measured absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Name of the parameter (or `"input"`) with the worst error.
    pub worst: String,
    pub param_coords: usize,
    pub input_coords: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Neumaier summation.
fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in terms {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Checks the parameter and input gradients of `layer` at `x` for the
/// scalar loss `Σ y ∘ R`, `R` drawn from `seed`. Dropout runs in training
/// mode with the same mask for every evaluation. At most 200 parameter and
/// 100 input coordinates are sampled.
pub fn check_layer<L: Layer>(layer: &L, x: &Array3<f64>, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask_seed: u64 = rng.random();
    let ctx = || Ctx::training(ChaCha8Rng::seed_from_u64(mask_seed));
    let (y, cache) = layer.forward(x, &mut ctx()).expect("gradient check input must fit the layer");
    let r = Array3::from_shape_simple_fn(y.dim(), || rng.random_range(-1.0..1.0));
    let out = |l: &L, x: &Array3<f64>| -> Array3<f64> { l.forward(x, &mut ctx()).expect("shape checked above").0 };
    // central difference of Σ y∘R, formed as Σ (y₊ − y₋)∘R / (x₊ − x₋) so
    // outputs the perturbation does not reach cancel exactly
    let central = |yp: Array3<f64>, ym: Array3<f64>, h: f64| -> f64 {
        compensated_sum(yp.iter().zip(ym.iter()).zip(r.iter()).map(|((a, b), w)| (a - b) * w)) / h
    };
    let mut grads = layer.zeros_like();
    let dx = layer.backward(&cache, &r, &mut grads);

    let views = layer.params();
    let names: Vec<String> = views.iter().map(|v| v.name.clone()).collect();
    let analytic: Vec<Vec<f64>> = grads.params().iter().map(|v| v.data.to_vec()).collect();
    let coords: Vec<(usize, usize)> = views
        .iter()
        .enumerate()
        .flat_map(|(i, v)| (0..v.data.len()).map(move |j| (i, j)))
        .collect();
    drop(views);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        param_coords: 0,
        input_coords: 0,
    };
    let note = |err: f64, name: &str, report: &mut GradCheckReport| {
        if err > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = name.to_string();
        }
    };

    let n_param = coords.len().min(MAX_PARAM_COORDS);
    for pick in sample(&mut rng, coords.len(), n_param) {
        let (i, j) = coords[pick];
        let mut plus = layer.clone();
        plus.params_mut()[i][j] += FD_EPS;
        let mut minus = layer.clone();
        minus.params_mut()[i][j] -= FD_EPS;
        let h = plus.params_mut()[i][j] - minus.params_mut()[i][j];
        let numeric = central(out(&plus, x), out(&minus, x), h);
        note(relative_error(analytic[i][j], numeric), &names[i], &mut report);
        report.param_coords += 1;
    }

    let n_input = x.len().min(MAX_INPUT_COORDS);
    let dx_flat: Vec<f64> = dx.iter().copied().collect();
    for pick in sample(&mut rng, x.len(), n_input) {
        let mut plus = x.clone();
        plus.as_slice_mut().expect("standard layout")[pick] += FD_EPS;
        let mut minus = x.clone();
        minus.as_slice_mut().expect("standard layout")[pick] -= FD_EPS;
        let h = plus.as_slice().expect("standard layout")[pick] - minus.as_slice().expect("standard layout")[pick];
        let numeric = central(out(layer, &plus), out(layer, &minus), h);
        note(relative_error(dx_flat[pick], numeric), "input", &mut report);
        report.input_coords += 1;
    }
    report
}

/// [`check_layer`] applied to a whole model.
pub fn check_model<L: Layer>(model: &L, x: &Array3<f64>, seed: u64) -> GradCheckReport {
    check_layer(model, x, seed)
}

/// Moves every parameter by a small random amount. Freshly built models
/// have zero biases, and with few filters a receptive field holding only
/// exact zeros (dead units, dropped entries, causal padding) then puts a
/// ReLU exactly on its kink, where no finite difference agrees with the
/// one-sided derivative.
fn jitter<L: Layer>(model: &mut L, rng: &mut ChaCha8Rng) {
    for p in model.params_mut() {
        for v in p.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
}

/// Result of checking one layer type over several random shapes.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub layer: String,
    pub shapes: usize,
    pub max_rel_err: f64,
    /// Shape description of the worst case.
    pub worst_shape: String,
}

/// Central-difference check of [`mse_loss`] with respect to predictions.
pub fn check_mse(pred: &Array3<f64>, target: &Array3<f64>, lengths: Option<&[usize]>) -> f64 {
    let (_, analytic) = mse_loss(pred, target, lengths).expect("shapes agree");
    let mut worst = 0.0f64;
    for i in 0..pred.len() {
        let mut plus = pred.clone();
        plus.as_slice_mut().expect("standard layout")[i] += FD_EPS;
        let mut minus = pred.clone();
        minus.as_slice_mut().expect("standard layout")[i] -= FD_EPS;
        let lp = mse_loss(&plus, target, lengths).expect("shapes agree").0;
        let lm = mse_loss(&minus, target, lengths).expect("shapes agree").0;
        let numeric = (lp - lm) / (2.0 * FD_EPS);
        worst = worst.max(relative_error(analytic.as_slice().expect("standard layout")[i], numeric));
    }
    worst
}

/// Checks every layer type (TCN block, GRU, dense, both upsampling modes,
/// dropout in training and inference paths, MSE) on `shapes` random small
/// Every layer type on `shapes` random small shapes, plus the two whole
/// models on tiny configurations.
pub fn gradient_suite(seed: u64, shapes: usize) -> Vec<SuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut record = |layer: &str, results: Vec<(f64, String)>| {
        let (max_rel_err, worst_shape) = results
            .iter()
            .cloned()
            .fold((0.0f64, String::new()), |acc, r| if r.0 >= acc.0 { r } else { acc });
        out.push(SuiteEntry {
            layer: layer.to_string(),
            shapes: results.len(),
            max_rel_err,
            worst_shape,
        });
    };
    let input = |rng: &mut ChaCha8Rng, b: usize, t: usize, f: usize| {
        Array3::from_shape_simple_fn((b, t, f), || rng.random_range(-1.0..1.0))
    };

    let mut res = Vec::new();
    for _ in 0..shapes {
        let (b, t) = (rng.random_range(1..=3), rng.random_range(2..=8));
        let (fi, fo) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let (k, d) = (rng.random_range(1..=3), rng.random_range(1..=2));
        let residual = rng.random_bool(0.7);
        let layer = TcnBlock::new("tcn", fi, fo, k, d, residual, &mut rng).expect("valid shape");
        let x = input(&mut rng, b, t, fi);
        let rep = check_layer(&layer, &x, rng.random());
        res.push((rep.max_rel_err, format!("b{b} t{t} {fi}->{fo} k{k} d{d} res={residual}")));
    }
    record("tcn", res);

    let mut res = Vec::new();
    for _ in 0..shapes {
        let (b, t) = (rng.random_range(1..=3), rng.random_range(2..=12));
        let (fi, h) = (rng.random_range(1..=4), rng.random_range(1..=5));
        let layer = Gru::new("gru", fi, h, &mut rng).expect("valid shape");
        let x = input(&mut rng, b, t, fi);
        let rep = check_layer(&layer, &x, rng.random());
        res.push((rep.max_rel_err, format!("b{b} t{t} {fi}->{h}")));
    }
    record("gru", res);

    let mut res = Vec::new();
    for _ in 0..shapes {
        let (b, t) = (rng.random_range(1..=3), rng.random_range(1..=6));
        let (fi, fo) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let layer = Dense::new("dense", fi, fo, &mut rng).expect("valid shape");
        let x = input(&mut rng, b, t, fi);
        let rep = check_layer(&layer, &x, rng.random());
        res.push((rep.max_rel_err, format!("b{b} t{t} {fi}->{fo}")));
    }
    record("dense", res);

    for mode in [UpsampleMode::Repeat, UpsampleMode::Linear] {
        let mut res = Vec::new();
        for _ in 0..shapes {
            let (b, t, f) = (rng.random_range(1..=3), rng.random_range(1..=6), rng.random_range(1..=4));
            let k = rng.random_range(1..=5);
            let layer = Upsample::new(k, mode).expect("valid factor");
            let x = input(&mut rng, b, t, f);
            let rep = check_layer(&layer, &x, rng.random());
            res.push((rep.max_rel_err, format!("b{b} t{t} f{f} x{k}")));
        }
        record(&format!("upsample_{}", if mode == UpsampleMode::Repeat { "repeat" } else { "linear" }), res);
    }

    let mut res = Vec::new();
    for i in 0..shapes {
        let (b, t, f) = (rng.random_range(1..=3), rng.random_range(1..=6), rng.random_range(1..=4));
        // alternate the inference (rate 0) path and a fixed training mask
        let rate = if i % 2 == 0 { 0.0 } else { 0.2 };
        let layer = Dropout::new(rate).expect("valid rate");
        let x = input(&mut rng, b, t, f);
        let rep = check_layer(&layer, &x, rng.random());
        res.push((rep.max_rel_err, format!("b{b} t{t} f{f} p{rate}")));
    }
    record("dropout", res);

    let mut res = Vec::new();
    for _ in 0..shapes {
        let (b, t, f) = (rng.random_range(1..=3), rng.random_range(1..=6), rng.random_range(1..=4));
        let pred = input(&mut rng, b, t, f);
        let target = input(&mut rng, b, t, f);
        let lengths: Vec<usize> = (0..b).map(|_| rng.random_range(1..=t)).collect();
        let masked = rng.random_bool(0.5);
        let err = check_mse(&pred, &target, masked.then_some(lengths.as_slice()));
        res.push((err, format!("b{b} t{t} f{f} masked={masked}")));
    }
    record("mse", res);

    let mut res = Vec::new();
    for _ in 0..shapes {
        let cfg = SynthesisConfig {
            filters1: rng.random_range(2..=4),
            filters2: rng.random_range(1..=2),
            ..SynthesisConfig::default()
        };
        let mut m = build_synthesis_model(&cfg, rng.random()).expect("valid config");
        jitter(&mut m, &mut rng);
        let (b, t) = (rng.random_range(1..=2), rng.random_range(2..=5));
        let x = input(&mut rng, b, t, cfg.input_dim);
        let rep = check_model(&m, &x, rng.random());
        res.push((rep.max_rel_err, format!("b{b} t{t} filters {}/{}", cfg.filters1, cfg.filters2)));
    }
    record("synthesis_model", res);

    let mut res = Vec::new();
    for _ in 0..shapes {
        let cfg = RegressionConfig {
            input_dim: rng.random_range(2..=6),
            hidden: rng.random_range(2..=8),
            dropout: 0.2,
            out_dim: [1, 2, 6, 7, 12][rng.random_range(0..5)],
        };
        let mut m = build_regression_model(&cfg, rng.random()).expect("valid config");
        jitter(&mut m, &mut rng);
        let (b, t) = (rng.random_range(1..=2), rng.random_range(2..=8));
        let x = input(&mut rng, b, t, cfg.input_dim);
        let rep = check_model(&m, &x, rng.random());
        res.push((rep.max_rel_err, format!("b{b} t{t} {}->{}->{}", cfg.input_dim, cfg.hidden, cfg.out_dim)));
    }
    record("regression_model", res);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn linear_model_is_nearly_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::new("d", 6, 3, &mut rng).unwrap();
        let x = Array3::from_shape_simple_fn((3, 5, 6), || rng.random_range(-1.0..1.0));
        let rep = check_model(&d, &x, 2);
        assert!(rep.max_rel_err < 1e-7, "{rep:?}");
        assert_eq!(rep.param_coords, 21);
        assert_eq!(rep.input_coords, 90);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // a layer whose backward is off by a factor must be flagged
        #[derive(Clone)]
        struct Broken(Dense);
        impl crate::nn::Params for Broken {
            fn params(&self) -> Vec<crate::nn::ParamView<'_>> {
                self.0.params()
            }
            fn params_mut(&mut self) -> Vec<&mut [f64]> {
                self.0.params_mut()
            }
        }
        impl Layer for Broken {
            type Cache = Array3<f64>;
            fn forward(&self, x: &Array3<f64>, ctx: &mut Ctx) -> Result<(Array3<f64>, Array3<f64>), crate::nn::NnError> {
                self.0.forward(x, ctx)
            }
            fn backward(&self, c: &Array3<f64>, dy: &Array3<f64>, g: &mut Self) -> Array3<f64> {
                self.0.backward(c, &(dy * 1.1), &mut g.0)
            }
            fn zeros_like(&self) -> Self {
                Broken(self.0.zeros_like())
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Broken(Dense::new("d", 2, 2, &mut rng).unwrap());
        let x = Array3::from_shape_simple_fn((1, 3, 2), || rng.random_range(-1.0..1.0));
        assert!(check_layer(&b, &x, 4).max_rel_err > 0.05);
    }
}
