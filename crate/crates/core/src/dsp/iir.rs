//! Butterworth band-pass and notch design as cascades of second-order
//! sections, plus single-pass and forward-backward filtering.

use rustfft::num_complex::Complex64;
use std::f64::consts::PI;

use super::DspError;

/// One biquad section in direct form: `b0 + b1 z^-1 + b2 z^-2` over
/// `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        quadratic_roots(1.0, self.a1, self.a2)
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }

    /// Steady-state delay-line contents for a unit-step input (transposed
    /// direct form II).
    fn step_state(&self) -> [f64; 2] {
        let gain = (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2);
        let z2 = self.b2 - self.a2 * gain;
        let z1 = self.b1 - self.a1 * gain + z2;
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }
}

/// An immutable cascade of second-order sections.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IirFilter {
    pub sections: Vec<Biquad>,
    pub description: String,
}

impl IirFilter {
    pub fn new(sections: Vec<Biquad>, description: impl Into<String>) -> Result<Self, DspError> {
        let description = description.into();
        for (i, s) in sections.iter().enumerate() {
            let coeffs = [s.b0, s.b1, s.b2, s.a1, s.a2];
            if coeffs.iter().any(|c| !c.is_finite()) {
                return Err(DspError::UnstableFilter(format!(
                    "{description}: section {i} has non-finite coefficients"
                )));
            }
            if !s.is_stable() {
                return Err(DspError::UnstableFilter(format!(
                    "{description}: section {i} has a pole on or outside the unit circle"
                )));
            }
        }
        Ok(IirFilter {
            sections,
            description,
        })
    }

    pub fn identity() -> Self {
        IirFilter {
            sections: vec![Biquad::IDENTITY],
            description: "identity".into(),
        }
    }

    /// Filter order counted as twice the number of sections.
    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    /// Complex frequency response at `freq_hz` for sample rate `fs_hz`.
    pub fn response_at(&self, freq_hz: f64, fs_hz: f64) -> Complex64 {
        let omega = 2.0 * PI * freq_hz / fs_hz;
        self.sections
            .iter()
            .map(|s| s.response(omega))
            .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
    }

    pub fn gain_db(&self, freq_hz: f64, fs_hz: f64) -> f64 {
        20.0 * self.response_at(freq_hz, fs_hz).norm().log10()
    }

    /// The same sections applied twice in series.
    pub fn cascade(&self, other: &IirFilter) -> IirFilter {
        let mut sections = self.sections.clone();
        sections.extend_from_slice(&other.sections);
        IirFilter {
            sections,
            description: format!("{} * {}", self.description, other.description),
        }
    }

    /// Causal single pass starting from a zeroed state.
    pub fn apply(&self, signal: &[f64]) -> Vec<f64> {
        let mut out = signal.to_vec();
        for s in &self.sections {
            run_section(s, &mut out, [0.0, 0.0]);
        }
        out
    }

    fn apply_with_step_state(&self, data: &mut [f64], x0: f64) {
        let mut level = x0;
        for s in &self.sections {
            let zi = s.step_state();
            run_section(s, data, [zi[0] * level, zi[1] * level]);
            level *= s.dc_gain();
        }
    }
}

fn run_section(s: &Biquad, data: &mut [f64], state: [f64; 2]) {
    let [mut z1, mut z2] = state;
    for v in data.iter_mut() {
        let x = *v;
        let y = s.b0 * x + z1;
        z1 = s.b1 * x - s.a1 * y + z2;
        z2 = s.b2 * x - s.a2 * y;
        *v = y;
    }
}

/// Zero-phase forward-backward filtering with odd-symmetric edge extension
/// and step-response initial conditions on both passes.
pub fn filtfilt(filter: &IirFilter, signal: &[f64]) -> Result<Vec<f64>, DspError> {
    let n = signal.len();
    let pad = 3 * filter.order();
    if n <= pad {
        return Err(DspError::SignalTooShort {
            needed: pad + 1,
            got: n,
        });
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let first = signal[0];
    let last = signal[n - 1];
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

    let x0 = ext[0];
    filter.apply_with_step_state(&mut ext, x0);
    ext.reverse();
    let y0 = ext[0];
    filter.apply_with_step_state(&mut ext, y0);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> [Complex64; 2] {
    let disc = Complex64::new(b * b - 4.0 * a * c, 0.0).sqrt();
    [(-b + disc) / (2.0 * a), (-b - disc) / (2.0 * a)]
}

/// Butterworth band-pass: analog low-pass prototype of `order` poles,
/// low-pass to band-pass transform on pre-warped edges, bilinear map.
/// The digital filter has `2 * order` poles.
pub fn design_butterworth_bandpass(
    order: usize,
    lo_hz: f64,
    hi_hz: f64,
    fs_hz: f64,
) -> Result<IirFilter, DspError> {
    if order == 0 {
        return Err(DspError::InvalidBand("order must be at least 1".into()));
    }
    if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < fs_hz / 2.0) {
        return Err(DspError::InvalidBand(format!(
            "need 0 < lo < hi < fs/2, got lo={lo_hz} hi={hi_hz} fs={fs_hz}"
        )));
    }
    let fs2 = 2.0 * fs_hz;
    let w_lo = fs2 * (PI * lo_hz / fs_hz).tan();
    let w_hi = fs2 * (PI * hi_hz / fs_hz).tan();
    let w0 = (w_lo * w_hi).sqrt();
    let bw = w_hi - w_lo;

    let mut analog_poles = Vec::with_capacity(2 * order);
    for k in 1..=order {
        let theta = PI * (2 * k + order - 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        // s^2 - p*bw*s + w0^2 = 0
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0 * w0).sqrt();
        analog_poles.push((pb + disc) / 2.0);
        analog_poles.push((pb - disc) / 2.0);
    }
    let digital: Vec<Complex64> = analog_poles
        .iter()
        .map(|&s| (fs2 + s) / (fs2 - s))
        .collect();

    let center = 2.0 * (w0 / fs2).atan();
    let sections = pair_poles(&digital)
        .into_iter()
        .map(|(a1, a2)| {
            let mut s = Biquad {
                b0: 1.0,
                b1: 0.0,
                b2: -1.0,
                a1,
                a2,
            };
            let g = s.response(center).norm();
            s.b0 /= g;
            s.b2 /= g;
            s
        })
        .collect();
    IirFilter::new(
        sections,
        format!(
            "butterworth band-pass, analog prototype order {order} ({} digital poles), {lo_hz}-{hi_hz} Hz at fs {fs_hz} Hz",
            2 * order
        ),
    )
}

/// Groups poles into conjugate pairs (or pairs of real poles) and returns
/// the `(a1, a2)` denominators.
fn pair_poles(poles: &[Complex64]) -> Vec<(f64, f64)> {
    const TOL: f64 = 1e-10;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > TOL).collect();
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= TOL)
        .map(|p| p.re)
        .collect();
    real.sort_by(f64::total_cmp);

    let mut out: Vec<(f64, f64)> = complex
        .iter()
        .map(|p| (-2.0 * p.re, p.norm_sqr()))
        .collect();
    for pair in real.chunks(2) {
        match pair {
            [r1, r2] => out.push((-(r1 + r2), r1 * r2)),
            [r] => out.push((-r, 0.0)),
            _ => unreachable!(),
        }
    }
    out
}

/// Second-order notch at `f0_hz` with quality factor `q`.
pub fn design_iir_notch(f0_hz: f64, q: f64, fs_hz: f64) -> Result<IirFilter, DspError> {
    if !(f0_hz > 0.0 && f0_hz < fs_hz / 2.0) {
        return Err(DspError::InvalidBand(format!(
            "notch frequency must lie in (0, fs/2), got {f0_hz} at fs {fs_hz}"
        )));
    }
    if q <= 0.0 || !q.is_finite() {
        return Err(DspError::InvalidBand(format!("notch Q must be positive, got {q}")));
    }
    let w0 = 2.0 * PI * f0_hz / fs_hz;
    let beta = (w0 / q / 2.0).tan();
    let gain = 1.0 / (1.0 + beta);
    let c = w0.cos();
    let section = Biquad {
        b0: gain,
        b1: -2.0 * gain * c,
        b2: gain,
        a1: -2.0 * gain * c,
        a2: 2.0 * gain - 1.0,
    };
    IirFilter::new(
        vec![section],
        format!("notch {f0_hz} Hz, Q {q}, fs {fs_hz} Hz"),
    )
}
