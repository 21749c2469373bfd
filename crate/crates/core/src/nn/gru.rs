//! Gated recurrent unit layer with backpropagation through time.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Zip};
use rand::Rng;

use super::layers::fan_in_uniform;
use super::{view, Ctx, Layer, NnError, ParamView, Params};

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Single-layer GRU, zero initial state, returning every hidden state:
///
/// ```text
/// z = σ(x W_z + h U_z + b_z)
/// r = σ(x W_r + h U_r + b_r)
/// h̃ = tanh(x W_h + (r ∘ h) U_h + b_h)
/// h ← (1 − z) ∘ h + z ∘ h̃
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub name: String,
    pub w_z: Array2<f64>,
    pub w_r: Array2<f64>,
    pub w_h: Array2<f64>,
    pub u_z: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_z: Array1<f64>,
    pub b_r: Array1<f64>,
    pub b_h: Array1<f64>,
}

pub struct GruStep {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    h_tilde: Array2<f64>,
}

impl Gru {
    pub fn new<R: Rng>(name: &str, in_dim: usize, hidden: usize, rng: &mut R) -> Result<Self, NnError> {
        if in_dim == 0 || hidden == 0 {
            return Err(NnError::Config(format!("GRU {name}: widths must be positive")));
        }
        let mut w = || Array2::from_shape_vec((in_dim, hidden), fan_in_uniform(rng, &[in_dim, hidden], in_dim));
        let (w_z, w_r, w_h) = (w().expect("shape"), w().expect("shape"), w().expect("shape"));
        let mut u = || Array2::from_shape_vec((hidden, hidden), fan_in_uniform(rng, &[hidden, hidden], hidden));
        let (u_z, u_r, u_h) = (u().expect("shape"), u().expect("shape"), u().expect("shape"));
        Ok(Gru {
            name: name.to_string(),
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z: Array1::zeros(hidden),
            b_r: Array1::zeros(hidden),
            b_h: Array1::zeros(hidden),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.w_z.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w_z.ncols()
    }

    fn step(&self, x: ArrayView2<f64>, h: &Array2<f64>) -> GruStep {
        let mut z = x.dot(&self.w_z) + h.dot(&self.u_z) + &self.b_z;
        z.mapv_inplace(sigmoid);
        let mut r = x.dot(&self.w_r) + h.dot(&self.u_r) + &self.b_r;
        r.mapv_inplace(sigmoid);
        let mut h_tilde = x.dot(&self.w_h) + (&r * h).dot(&self.u_h) + &self.b_h;
        h_tilde.mapv_inplace(f64::tanh);
        GruStep {
            x: x.to_owned(),
            h_prev: h.clone(),
            z,
            r,
            h_tilde,
        }
    }
}

impl Params for Gru {
    fn params(&self) -> Vec<ParamView<'_>> {
        let n = &self.name;
        let mats = [
            ("w_z", &self.w_z),
            ("w_r", &self.w_r),
            ("w_h", &self.w_h),
            ("u_z", &self.u_z),
            ("u_r", &self.u_r),
            ("u_h", &self.u_h),
        ];
        let mut v: Vec<ParamView<'_>> = mats
            .into_iter()
            .map(|(name, a)| view(n, name, a.shape(), a.as_slice().expect("contiguous")))
            .collect();
        for (name, b) in [("b_z", &self.b_z), ("b_r", &self.b_r), ("b_h", &self.b_h)] {
            v.push(view(n, name, b.shape(), b.as_slice().expect("contiguous")));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_z.as_slice_mut().expect("contiguous"),
            self.w_r.as_slice_mut().expect("contiguous"),
            self.w_h.as_slice_mut().expect("contiguous"),
            self.u_z.as_slice_mut().expect("contiguous"),
            self.u_r.as_slice_mut().expect("contiguous"),
            self.u_h.as_slice_mut().expect("contiguous"),
            self.b_z.as_slice_mut().expect("contiguous"),
            self.b_r.as_slice_mut().expect("contiguous"),
            self.b_h.as_slice_mut().expect("contiguous"),
        ]
    }
}

impl Layer for Gru {
    type Cache = Vec<GruStep>;

    fn forward(&self, x: &Array3<f64>, _ctx: &mut Ctx) -> Result<(Array3<f64>, Vec<GruStep>), NnError> {
        let (b, t, f) = x.dim();
        if f != self.in_dim() {
            return Err(NnError::Shape(format!(
                "{} expects {} input features, got {f}",
                self.name,
                self.in_dim()
            )));
        }
        let hdim = self.hidden();
        let mut h = Array2::zeros((b, hdim));
        let mut out = Array3::zeros((b, t, hdim));
        let mut steps = Vec::with_capacity(t);
        for ti in 0..t {
            let st = self.step(x.slice(s![.., ti, ..]), &h);
            h = &st.h_prev + &(&st.z * &(&st.h_tilde - &st.h_prev));
            out.slice_mut(s![.., ti, ..]).assign(&h);
            steps.push(st);
        }
        Ok((out, steps))
    }

    fn backward(&self, steps: &Vec<GruStep>, dy: &Array3<f64>, g: &mut Self) -> Array3<f64> {
        let (b, t, _) = dy.dim();
        let mut dx = Array3::zeros((b, t, self.in_dim()));
        let mut dh_next = Array2::<f64>::zeros((b, self.hidden()));
        for ti in (0..t).rev() {
            let st = &steps[ti];
            let dh = &dy.slice(s![.., ti, ..]) + &dh_next;
            let dz = &dh * &(&st.h_tilde - &st.h_prev);
            let da_h = Zip::from(&dh)
                .and(&st.z)
                .and(&st.h_tilde)
                .map_collect(|&d, &z, &ht| d * z * (1.0 - ht * ht));
            let mut dh_prev = Zip::from(&dh).and(&st.z).map_collect(|&d, &z| d * (1.0 - z));
            let drh = da_h.dot(&self.u_h.t());
            let da_r = Zip::from(&drh)
                .and(&st.h_prev)
                .and(&st.r)
                .map_collect(|&d, &h, &r| d * h * r * (1.0 - r));
            dh_prev += &(&drh * &st.r);
            let da_z = Zip::from(&dz).and(&st.z).map_collect(|&d, &z| d * z * (1.0 - z));
            dh_prev += &da_z.dot(&self.u_z.t());
            dh_prev += &da_r.dot(&self.u_r.t());

            let xt = st.x.t();
            g.w_z += &xt.dot(&da_z);
            g.w_r += &xt.dot(&da_r);
            g.w_h += &xt.dot(&da_h);
            let hp = st.h_prev.t();
            g.u_z += &hp.dot(&da_z);
            g.u_r += &hp.dot(&da_r);
            g.u_h += &(&st.r * &st.h_prev).t().dot(&da_h);
            g.b_z += &da_z.sum_axis(Axis(0));
            g.b_r += &da_r.sum_axis(Axis(0));
            g.b_h += &da_h.sum_axis(Axis(0));

            let dxt = da_z.dot(&self.w_z.t()) + da_r.dot(&self.w_r.t()) + da_h.dot(&self.w_h.t());
            dx.slice_mut(s![.., ti, ..]).assign(&dxt);
            dh_next = dh_prev;
        }
        dx
    }

    fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.len());
        Gru {
            name: self.name.clone(),
            w_z: z2(&self.w_z),
            w_r: z2(&self.w_r),
            w_h: z2(&self.w_h),
            u_z: z2(&self.u_z),
            u_r: z2(&self.u_r),
            u_h: z2(&self.u_h),
            b_z: z1(&self.b_z),
            b_r: z1(&self.b_r),
            b_h: z1(&self.b_h),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_layer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_zero_output() {
        let g = Gru::new("g", 5, 7, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().zeros_like();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let x = Array3::from_shape_simple_fn((2, 6, 5), || r.random_range(-3.0..3.0));
        let (y, _) = g.forward(&x, &mut Ctx::inference()).unwrap();
        assert_eq!(y.dim(), (2, 6, 7));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_width_and_shape_errors() {
        let g = Gru::new("g", 30, 128, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = Array3::zeros((1, 4, 30));
        assert_eq!(g.forward(&x, &mut Ctx::inference()).unwrap().0.dim(), (1, 4, 128));
        assert!(g.forward(&Array3::zeros((1, 4, 29)), &mut Ctx::inference()).is_err());
        assert_eq!(g.param_count(), 3 * (30 * 128 + 128 * 128 + 128));
    }

    #[test]
    fn gradient_over_twelve_steps() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let g = Gru::new("g", 3, 4, &mut r).unwrap();
        let x = Array3::from_shape_simple_fn((2, 12, 3), || r.random_range(-1.0..1.0));
        let rep = check_layer(&g, &x, 3);
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
