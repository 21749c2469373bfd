//! Convolution, upsampling, dropout and dense layers.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{view, Ctx, Layer, NnError, ParamView, Params};

fn as_rows(x: &Array3<f64>) -> ArrayView2<'_, f64> {
    let (b, t, f) = x.dim();
    assert!(x.is_standard_layout(), "layer inputs must be in standard layout");
    x.view().into_shape_with_order((b * t, f)).expect("standard layout")
}

fn from_rows(m: Array2<f64>, b: usize, t: usize) -> Array3<f64> {
    let f = m.ncols();
    let m = if m.is_standard_layout() {
        m
    } else {
        m.as_standard_layout().into_owned()
    };
    m.into_shape_with_order((b, t, f)).expect("standard layout")
}

fn check_width(x: &Array3<f64>, want: usize, layer: &str) -> Result<(), NnError> {
    if x.dim().2 != want {
        return Err(NnError::Shape(format!(
            "{layer} expects {want} input features, got {}",
            x.dim().2
        )));
    }
    Ok(())
}

/// Copies `x` delayed by `shift` steps along time, zero-filled at the start.
fn delayed(x: &Array3<f64>, shift: usize) -> Array3<f64> {
    let (b, t, f) = x.dim();
    if shift == 0 {
        return x.clone();
    }
    let mut out = Array3::zeros((b, t, f));
    if shift < t {
        out.slice_mut(s![.., shift.., ..]).assign(&x.slice(s![.., ..t - shift, ..]));
    }
    out
}

/// Adds `d` advanced by `shift` steps into `acc` (adjoint of [`delayed`]).
fn add_advanced(acc: &mut Array3<f64>, d: &Array3<f64>, shift: usize) {
    let t = d.dim().1;
    if shift == 0 {
        *acc += d;
    } else if shift < t {
        let mut dst = acc.slice_mut(s![.., ..t - shift, ..]);
        dst += &d.slice(s![.., shift.., ..]);
    }
}

/// Uniform `±1/sqrt(fan_in)` initialization.
pub(crate) fn fan_in_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..shape.iter().product::<usize>())
        .map(|_| rng.random_range(-bound..bound))
        .collect()
}

/// One residual block of a temporal convolutional network: causal dilated
/// convolution, ReLU, plus a residual path (1×1 projection when the widths
/// differ).
#[derive(Debug, Clone, PartialEq)]
pub struct TcnBlock {
    pub name: String,
    /// `kernel × in × out`; tap `k` looks `(kernel − 1 − k) · dilation` steps back.
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
    pub dilation: usize,
    pub residual: bool,
    /// `in × out` projection and bias, present when `residual` and widths differ.
    pub proj: Option<(Array2<f64>, Array1<f64>)>,
}

impl TcnBlock {
    pub fn new<R: Rng>(
        name: &str,
        in_dim: usize,
        out_dim: usize,
        kernel: usize,
        dilation: usize,
        residual: bool,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if kernel == 0 || dilation == 0 || in_dim == 0 || out_dim == 0 {
            return Err(NnError::Config(format!(
                "TCN {name}: kernel, dilation and widths must be positive"
            )));
        }
        let w = fan_in_uniform(rng, &[kernel, in_dim, out_dim], kernel * in_dim);
        let proj = (residual && in_dim != out_dim).then(|| {
            let p = fan_in_uniform(rng, &[in_dim, out_dim], in_dim);
            (
                Array2::from_shape_vec((in_dim, out_dim), p).expect("shape"),
                Array1::zeros(out_dim),
            )
        });
        Ok(TcnBlock {
            name: name.to_string(),
            weight: Array3::from_shape_vec((kernel, in_dim, out_dim), w).expect("shape"),
            bias: Array1::zeros(out_dim),
            dilation,
            residual,
            proj,
        })
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().0
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dim().2
    }

    fn shift(&self, k: usize) -> usize {
        (self.kernel() - 1 - k) * self.dilation
    }
}

pub struct TcnCache {
    x: Array3<f64>,
    pre: Array3<f64>,
}

impl Params for TcnBlock {
    fn params(&self) -> Vec<ParamView<'_>> {
        let mut v = vec![
            view(&self.name, "weight", self.weight.shape(), self.weight.as_slice().expect("contiguous")),
            view(&self.name, "bias", self.bias.shape(), self.bias.as_slice().expect("contiguous")),
        ];
        if let Some((p, pb)) = &self.proj {
            v.push(view(&self.name, "proj", p.shape(), p.as_slice().expect("contiguous")));
            v.push(view(&self.name, "proj_bias", pb.shape(), pb.as_slice().expect("contiguous")));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![
            self.weight.as_slice_mut().expect("contiguous"),
            self.bias.as_slice_mut().expect("contiguous"),
        ];
        if let Some((p, pb)) = &mut self.proj {
            v.push(p.as_slice_mut().expect("contiguous"));
            v.push(pb.as_slice_mut().expect("contiguous"));
        }
        v
    }
}

impl Layer for TcnBlock {
    type Cache = TcnCache;

    fn forward(&self, x: &Array3<f64>, _ctx: &mut Ctx) -> Result<(Array3<f64>, TcnCache), NnError> {
        check_width(x, self.in_dim(), &self.name)?;
        let (b, t, _) = x.dim();
        let mut pre = Array2::from_shape_fn((b * t, self.out_dim()), |(_, o)| self.bias[o]);
        for k in 0..self.kernel() {
            let xs = delayed(x, self.shift(k));
            pre += &as_rows(&xs).dot(&self.weight.index_axis(Axis(0), k));
        }
        let pre = from_rows(pre, b, t);
        let mut y = pre.mapv(|v| v.max(0.0));
        if self.residual {
            match &self.proj {
                Some((p, pb)) => y += &from_rows(as_rows(x).dot(p) + pb, b, t),
                None => y += x,
            }
        }
        Ok((
            y,
            TcnCache {
                x: x.clone(),
                pre,
            },
        ))
    }

    fn backward(&self, cache: &TcnCache, dy: &Array3<f64>, grads: &mut Self) -> Array3<f64> {
        let (b, t, _) = dy.dim();
        let dpre = ndarray::Zip::from(dy)
            .and(&cache.pre)
            .map_collect(|&g, &p| if p > 0.0 { g } else { 0.0 });
        let dpre_rows = as_rows(&dpre);
        grads.bias += &dpre_rows.sum_axis(Axis(0));
        let mut dx = Array3::zeros(cache.x.dim());
        for k in 0..self.kernel() {
            let shift = self.shift(k);
            let xs = delayed(&cache.x, shift);
            let mut gw = grads.weight.index_axis_mut(Axis(0), k);
            gw += &as_rows(&xs).t().dot(&dpre_rows);
            let dxs = from_rows(dpre_rows.dot(&self.weight.index_axis(Axis(0), k).t()), b, t);
            add_advanced(&mut dx, &dxs, shift);
        }
        if self.residual {
            match (&self.proj, &mut grads.proj) {
                (Some((p, _)), Some((gp, gpb))) => {
                    let dy_rows = as_rows(dy);
                    *gp += &as_rows(&cache.x).t().dot(&dy_rows);
                    *gpb += &dy_rows.sum_axis(Axis(0));
                    dx += &from_rows(dy_rows.dot(&p.t()), b, t);
                }
                _ => dx += dy,
            }
        }
        dx
    }

    fn zeros_like(&self) -> Self {
        TcnBlock {
            name: self.name.clone(),
            weight: Array3::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.len()),
            dilation: self.dilation,
            residual: self.residual,
            proj: self
                .proj
                .as_ref()
                .map(|(p, pb)| (Array2::zeros(p.dim()), Array1::zeros(pb.len()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    /// Each step repeated `factor` times.
    Repeat,
    /// Linear interpolation towards the next step (the last step is held);
    /// looks one input step ahead.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Upsample {
    pub factor: usize,
    pub mode: UpsampleMode,
}

impl Upsample {
    pub fn new(factor: usize, mode: UpsampleMode) -> Result<Self, NnError> {
        if factor == 0 {
            return Err(NnError::Config("upsample factor must be at least 1".into()));
        }
        Ok(Upsample { factor, mode })
    }

    /// `(source step, weight)` pairs feeding output step `j` of input step `t`.
    fn taps(&self, t: usize, j: usize, len: usize) -> [(usize, f64); 2] {
        match self.mode {
            UpsampleMode::Repeat => [(t, 1.0), (t, 0.0)],
            UpsampleMode::Linear => {
                let a = j as f64 / self.factor as f64;
                if t + 1 < len {
                    [(t, 1.0 - a), (t + 1, a)]
                } else {
                    [(t, 1.0), (t, 0.0)]
                }
            }
        }
    }
}

impl Params for Upsample {
    fn params(&self) -> Vec<ParamView<'_>> {
        vec![]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![]
    }
}

impl Layer for Upsample {
    type Cache = ();

    fn forward(&self, x: &Array3<f64>, _ctx: &mut Ctx) -> Result<(Array3<f64>, ()), NnError> {
        let (b, t, f) = x.dim();
        let k = self.factor;
        let mut y = Array3::zeros((b, t * k, f));
        if self.mode == UpsampleMode::Repeat {
            for j in 0..k {
                y.slice_mut(s![.., j..;k, ..]).assign(x);
            }
            return Ok((y, ()));
        }
        for ti in 0..t {
            for j in 0..k {
                let mut dst = y.slice_mut(s![.., ti * k + j, ..]);
                for (src, w) in self.taps(ti, j, t) {
                    if w != 0.0 {
                        dst.scaled_add(w, &x.slice(s![.., src, ..]));
                    }
                }
            }
        }
        Ok((y, ()))
    }

    fn backward(&self, _cache: &(), dy: &Array3<f64>, _grads: &mut Self) -> Array3<f64> {
        let (b, tk, f) = dy.dim();
        let k = self.factor;
        let t = tk / k;
        let mut dx = Array3::zeros((b, t, f));
        if self.mode == UpsampleMode::Repeat {
            for j in 0..k {
                dx += &dy.slice(s![.., j..;k, ..]);
            }
            return dx;
        }
        for ti in 0..t {
            for j in 0..k {
                let g = dy.slice(s![.., ti * k + j, ..]);
                for (src, w) in self.taps(ti, j, t) {
                    if w != 0.0 {
                        dx.slice_mut(s![.., src, ..]).scaled_add(w, &g);
                    }
                }
            }
        }
        dx
    }

    fn zeros_like(&self) -> Self {
        *self
    }
}

/// Inverted dropout: in training, zero with probability `rate` and scale
/// survivors by `1/(1 − rate)`; identity at inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Config(format!("dropout rate {rate} not in [0, 1)")));
        }
        Ok(Dropout { rate })
    }
}

impl Params for Dropout {
    fn params(&self) -> Vec<ParamView<'_>> {
        vec![]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![]
    }
}

impl Layer for Dropout {
    /// Per-entry multiplier, or `None` when the layer acted as identity.
    type Cache = Option<Array3<f64>>;

    fn forward(&self, x: &Array3<f64>, ctx: &mut Ctx) -> Result<(Array3<f64>, Self::Cache), NnError> {
        if !ctx.training || self.rate == 0.0 {
            return Ok((x.clone(), None));
        }
        let rng = ctx
            .rng
            .as_mut()
            .ok_or_else(|| NnError::Config("training-mode dropout needs an rng".into()))?;
        let keep = 1.0 / (1.0 - self.rate);
        let mask = Array3::from_shape_simple_fn(x.dim(), || {
            if rng.random::<f64>() < self.rate {
                0.0
            } else {
                keep
            }
        });
        Ok((x * &mask, Some(mask)))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Array3<f64>, _grads: &mut Self) -> Array3<f64> {
        match cache {
            Some(mask) => dy * mask,
            None => dy.clone(),
        }
    }

    fn zeros_like(&self) -> Self {
        *self
    }
}

/// Time-distributed affine map with linear activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub name: String,
    /// `in × out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn new<R: Rng>(name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self, NnError> {
        if in_dim == 0 || out_dim == 0 {
            return Err(NnError::Config(format!("dense {name}: widths must be positive")));
        }
        let w = fan_in_uniform(rng, &[in_dim, out_dim], in_dim);
        Ok(Dense {
            name: name.to_string(),
            weight: Array2::from_shape_vec((in_dim, out_dim), w).expect("shape"),
            bias: Array1::zeros(out_dim),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }
}

impl Params for Dense {
    fn params(&self) -> Vec<ParamView<'_>> {
        vec![
            view(&self.name, "weight", self.weight.shape(), self.weight.as_slice().expect("contiguous")),
            view(&self.name, "bias", self.bias.shape(), self.bias.as_slice().expect("contiguous")),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weight.as_slice_mut().expect("contiguous"),
            self.bias.as_slice_mut().expect("contiguous"),
        ]
    }
}

impl Layer for Dense {
    type Cache = Array3<f64>;

    fn forward(&self, x: &Array3<f64>, _ctx: &mut Ctx) -> Result<(Array3<f64>, Array3<f64>), NnError> {
        check_width(x, self.in_dim(), &self.name)?;
        let (b, t, _) = x.dim();
        let y = from_rows(as_rows(x).dot(&self.weight) + &self.bias, b, t);
        Ok((y, x.clone()))
    }

    fn backward(&self, x: &Array3<f64>, dy: &Array3<f64>, grads: &mut Self) -> Array3<f64> {
        let (b, t, _) = dy.dim();
        let dy_rows = as_rows(dy);
        grads.weight += &as_rows(x).t().dot(&dy_rows);
        grads.bias += &dy_rows.sum_axis(Axis(0));
        from_rows(dy_rows.dot(&self.weight.t()), b, t)
    }

    fn zeros_like(&self) -> Self {
        Dense {
            name: self.name.clone(),
            weight: Array2::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_layer;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_input(b: usize, t: usize, f: usize, seed: u64) -> Array3<f64> {
        let mut r = rng(seed);
        Array3::from_shape_simple_fn((b, t, f), || r.random_range(-1.0..1.0))
    }

    #[test]
    fn tcn_preserves_length_and_reduces_to_relu() {
        let mut block = TcnBlock::new("t", 3, 3, 1, 1, false, &mut rng(0)).unwrap();
        block.weight = Array3::zeros((1, 3, 3));
        for i in 0..3 {
            block.weight[[0, i, i]] = 1.0;
        }
        let x = random_input(2, 7, 3, 1);
        let (y, _) = block.forward(&x, &mut Ctx::inference()).unwrap();
        assert_eq!(y, x.mapv(|v| v.max(0.0)));
        let wide = TcnBlock::new("w", 3, 5, 3, 2, true, &mut rng(1)).unwrap();
        let (y, _) = wide.forward(&x, &mut Ctx::inference()).unwrap();
        assert_eq!(y.dim(), (2, 7, 5));
        assert!(wide.forward(&random_input(1, 4, 2, 0), &mut Ctx::inference()).is_err());
    }

    #[test]
    fn tcn_is_causal() {
        let block = TcnBlock::new("t", 2, 4, 3, 2, true, &mut rng(2)).unwrap();
        let x = random_input(1, 20, 2, 3);
        let mut x2 = x.clone();
        x2[[0, 12, 1]] += 1.0;
        let (a, _) = block.forward(&x, &mut Ctx::inference()).unwrap();
        let (b, _) = block.forward(&x2, &mut Ctx::inference()).unwrap();
        for t in 0..12 {
            assert_eq!(a.slice(s![0, t, ..]), b.slice(s![0, t, ..]));
        }
        assert_ne!(a.slice(s![0, 12, ..]), b.slice(s![0, 12, ..]));
    }

    #[test]
    fn upsample_repeat_and_linear() {
        let x = array![[[1.0], [2.0]]];
        let up = Upsample::new(3, UpsampleMode::Repeat).unwrap();
        let (y, _) = up.forward(&x, &mut Ctx::inference()).unwrap();
        assert_eq!(y.iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let dx = up.backward(&(), &Array3::ones((1, 6, 1)), &mut up.clone());
        assert_eq!(dx, array![[[3.0], [3.0]]]);
        let lin = Upsample::new(2, UpsampleMode::Linear).unwrap();
        let (y, _) = lin.forward(&x, &mut Ctx::inference()).unwrap();
        assert_eq!(y.iter().copied().collect::<Vec<_>>(), vec![1.0, 1.5, 2.0, 2.0]);
    }

    #[test]
    fn dropout_modes_and_statistics() {
        let x = Array3::from_elem((10, 1000, 100), 1.0);
        let d = Dropout::new(0.2).unwrap();
        let (y, _) = d.forward(&x, &mut Ctx::inference()).unwrap();
        assert_eq!(y, x);
        let (y, _) = Dropout::new(0.0).unwrap().forward(&x, &mut Ctx::training(rng(1))).unwrap();
        assert_eq!(y, x);
        let (y, _) = d.forward(&x, &mut Ctx::training(rng(2))).unwrap();
        let zeros = y.iter().filter(|&&v| v == 0.0).count() as f64 / y.len() as f64;
        assert!((zeros - 0.2).abs() < 0.01, "{zeros}");
        assert!((y.mean().unwrap() - 1.0).abs() < 0.01);
        assert!(Dropout::new(1.0).is_err());
    }

    #[test]
    fn dense_identity() {
        let mut d = Dense::new("d", 4, 4, &mut rng(0)).unwrap();
        d.weight = Array2::eye(4);
        let x = random_input(2, 3, 4, 5);
        assert_eq!(d.forward(&x, &mut Ctx::inference()).unwrap().0, x);
    }

    #[test]
    fn layer_gradients() {
        let x = random_input(2, 9, 3, 7);
        let tcn = TcnBlock::new("t", 3, 4, 3, 2, true, &mut rng(3)).unwrap();
        assert!(check_layer(&tcn, &x, 11).max_rel_err < 1e-4);
        let tcn_same = TcnBlock::new("t", 3, 3, 2, 1, true, &mut rng(4)).unwrap();
        assert!(check_layer(&tcn_same, &x, 12).max_rel_err < 1e-4);
        let dense = Dense::new("d", 3, 2, &mut rng(5)).unwrap();
        assert!(check_layer(&dense, &x, 13).max_rel_err < 1e-6);
        for mode in [UpsampleMode::Repeat, UpsampleMode::Linear] {
            let up = Upsample::new(3, mode).unwrap();
            let rep = check_layer(&up, &x, 14);
            assert!(rep.max_rel_err < 1e-10, "{rep:?}");
        }
        let drop = Dropout::new(0.3).unwrap();
        assert!(check_layer(&drop, &x, 15).max_rel_err < 1e-10);
    }
}
