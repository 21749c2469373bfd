//! Constant-Q chroma, CENS chroma and the tonal-centroid projection.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};

use super::Analysis;

pub const PITCH_CLASSES: usize = 12;
/// MIDI numbers of C1 and B7: the span of the constant-Q filterbank.
const MIDI_LO: i32 = 24;
const MIDI_HI: i32 = 107;
const CENS_STEPS: [f64; 4] = [0.4, 0.2, 0.1, 0.05];
const NORM_FLOOR: f64 = 1e-30;

fn midi_hz(midi: i32) -> f64 {
    440.0 * 2f64.powf((midi - 69) as f64 / 12.0)
}

/// One Hann-windowed complex exponential, normalized so a unit-amplitude
/// sinusoid at the kernel frequency yields magnitude 1/2.
struct CqKernel {
    class: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

fn cq_kernels(fs: f64, q: f64) -> Vec<CqKernel> {
    (MIDI_LO..=MIDI_HI)
        .filter(|&m| midi_hz(m) < fs / 2.0)
        .map(|m| {
            let f = midi_hz(m);
            let len = ((q * fs / f).ceil() as usize).max(2);
            let win: Vec<f64> = (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect();
            let norm: f64 = win.iter().sum();
            let w = 2.0 * PI * f / fs;
            CqKernel {
                class: m.rem_euclid(12) as usize,
                cos: win.iter().enumerate().map(|(n, v)| v * (w * n as f64).cos() / norm).collect(),
                sin: win.iter().enumerate().map(|(n, v)| v * (w * n as f64).sin() / norm).collect(),
            }
        })
        .collect()
}

/// Raw per-frame pitch-class energy: constant-Q bin energies over C1–B7,
/// each kernel centred on the frame centre (zero outside the clip), summed
/// across octaves.
pub fn cqt_class_energy(a: &Analysis) -> Array2<f64> {
    let kernels = cq_kernels(a.sample_rate_hz() as f64, a.params.cqt_q);
    let x = a.samples;
    let n = x.len() as isize;
    let mut out = Array2::zeros((a.frame_count(), PITCH_CLASSES));
    for m in 0..a.frame_count() {
        let centre = (m * a.grid.hop) as isize;
        for k in &kernels {
            let len = k.cos.len() as isize;
            let start = centre - len / 2;
            let lo = (-start).max(0);
            let hi = (n - start).min(len);
            let (mut re, mut im) = (0.0, 0.0);
            for i in lo..hi {
                let v = x[(start + i) as usize];
                re += v * k.cos[i as usize];
                im += v * k.sin[i as usize];
            }
            out[[m, k.class]] += re * re + im * im;
        }
    }
    out
}

/// Constant-Q chroma scaled so each frame's largest class is 1 (silent
/// frames stay zero).
pub fn cqt_chroma(a: &Analysis) -> Array2<f64> {
    let mut c = cqt_class_energy(a);
    for mut row in c.rows_mut() {
        let mx = row.iter().copied().fold(0.0, f64::max);
        if mx > NORM_FLOOR {
            row.mapv_inplace(|v| v / mx);
        } else {
            row.fill(0.0);
        }
    }
    c
}

fn l1_normalize(row: &mut [f64]) {
    let s: f64 = row.iter().map(|v| v.abs()).sum();
    if s > NORM_FLOOR {
        row.iter_mut().for_each(|v| *v /= s);
    } else {
        row.fill(0.0);
    }
}

/// Chroma energy normalized statistics: L1-normalized chroma quantized by
/// the thresholds 0.4/0.2/0.1/0.05 (0.25 per step passed), smoothed along
/// time with a normalized Hann window, then L2-normalized per frame.
pub fn chroma_cens(a: &Analysis) -> Array2<f64> {
    let energy = cqt_class_energy(a);
    let frames = energy.nrows();
    let mut quant = Array2::<f64>::zeros((frames, PITCH_CLASSES));
    for m in 0..frames {
        let mut row = energy.row(m).to_vec();
        l1_normalize(&mut row);
        for (c, v) in row.iter().enumerate() {
            quant[[m, c]] = CENS_STEPS.iter().filter(|&&t| *v > t).count() as f64 * 0.25;
        }
    }

    let len = a.params.cens_smoothing;
    // interior of a (len + 2)-point Hann window, i.e. no zero end taps
    let win: Vec<f64> = (1..=len).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (len + 1) as f64).cos()).collect();
    let wsum: f64 = win.iter().sum();
    let half = (len / 2) as isize;
    let mut smooth = Array2::<f64>::zeros((frames, PITCH_CLASSES));
    for m in 0..frames as isize {
        for (j, w) in win.iter().enumerate() {
            let src = m + j as isize - half;
            if src < 0 || src >= frames as isize {
                continue;
            }
            for c in 0..PITCH_CLASSES {
                smooth[[m as usize, c]] += w / wsum * quant[[src as usize, c]];
            }
        }
    }
    for mut row in smooth.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > NORM_FLOOR {
            row.mapv_inplace(|v| v / n);
        } else {
            row.fill(0.0);
        }
    }
    smooth
}

/// `6 × 12` projection onto the circles of fifths, minor thirds and major
/// thirds (radii 1, 1, 0.5), as sine/cosine pairs.
pub fn tonnetz_matrix() -> Array2<f64> {
    let specs = [(7.0 * PI / 6.0, 1.0), (3.0 * PI / 2.0, 1.0), (2.0 * PI / 3.0, 0.5)];
    let mut phi = Array2::zeros((6, PITCH_CLASSES));
    for (i, &(step, r)) in specs.iter().enumerate() {
        for k in 0..PITCH_CLASSES {
            phi[[2 * i, k]] = r * (step * k as f64).sin();
            phi[[2 * i + 1, k]] = r * (step * k as f64).cos();
        }
    }
    phi
}

pub(crate) fn tonnetz_of(phi: &Array2<f64>, chroma: &[f64]) -> Array1<f64> {
    let mut c = chroma.to_vec();
    l1_normalize(&mut c);
    phi.dot(&Array1::from(c))
}

pub fn tonnetz(a: &Analysis) -> Array2<f64> {
    let cens = chroma_cens(a);
    let phi = tonnetz_matrix();
    let mut out = Array2::zeros((cens.nrows(), 6));
    for (m, row) in cens.rows().into_iter().enumerate() {
        out.row_mut(m).assign(&tonnetz_of(&phi, &row.to_vec()));
    }
    out
}
