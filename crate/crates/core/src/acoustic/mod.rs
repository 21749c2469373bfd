//! The sixteen acoustic feature kinds on the shared ~31 Hz audio grid.
//!
//! Every extractor works from one [`Analysis`] of a clip: a centred,
//! reflect-padded framing with hop `grid.hop`, its Hann power spectrogram
//! and the matching raw time-domain frames. All kinds therefore share the
//! frame count `1 + len / hop`.

mod chroma;
mod pitch;
mod rhythm;
mod spectral;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dsp::{centered_frames, frame_grid_for_rate, stft_power, DspError, FrameGrid, PowerSpectrogram, FEATURE_RATE_HZ};
use crate::textfmt::write_matrix_csv;

pub use chroma::{chroma_cens, cqt_chroma, cqt_class_energy, tonnetz, tonnetz_matrix, PITCH_CLASSES};
pub use pitch::{frame_pitch, pitch_track};
pub use rhythm::{onset_strength, tempogram};
pub use spectral::{
    band_edges, band_power, loudness, mel_filterbank, mel_spectrogram, poly_coeffs, spectral_bandwidth,
    spectral_centroid, spectral_contrast, spectral_flatness, spectral_rolloff, frame_rms, frame_zcr, hz_to_mel,
    mel_to_hz,
};

#[derive(Debug, thiserror::Error)]
pub enum AcousticError {
    #[error("clip of {got} samples is shorter than one {needed}-sample analysis window")]
    ClipTooShort { needed: usize, got: usize },
    #[error("invalid acoustic parameters: {0}")]
    InvalidParams(String),
    #[error("unknown feature kind {0:?}")]
    UnknownKind(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The sixteen kinds in their canonical f1..f16 order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    BandPower,
    CqtChroma,
    ChromaCens,
    Mel,
    Rms,
    Centroid,
    Bandwidth,
    Contrast,
    Flatness,
    Rolloff,
    Poly,
    Tonnetz,
    Zcr,
    Tempogram,
    Loudness,
    Pitch,
}

pub const TOTAL_ACOUSTIC_DIM: usize = 571;

impl FeatureKind {
    pub const ALL: [FeatureKind; 16] = [
        FeatureKind::BandPower,
        FeatureKind::CqtChroma,
        FeatureKind::ChromaCens,
        FeatureKind::Mel,
        FeatureKind::Rms,
        FeatureKind::Centroid,
        FeatureKind::Bandwidth,
        FeatureKind::Contrast,
        FeatureKind::Flatness,
        FeatureKind::Rolloff,
        FeatureKind::Poly,
        FeatureKind::Tonnetz,
        FeatureKind::Zcr,
        FeatureKind::Tempogram,
        FeatureKind::Loudness,
        FeatureKind::Pitch,
    ];

    pub fn dim(self) -> usize {
        match self {
            FeatureKind::BandPower => 12,
            FeatureKind::CqtChroma => 12,
            FeatureKind::ChromaCens => 12,
            FeatureKind::Mel => 128,
            FeatureKind::Contrast => 7,
            FeatureKind::Poly => 2,
            FeatureKind::Tonnetz => 6,
            FeatureKind::Tempogram => 384,
            FeatureKind::Rms
            | FeatureKind::Centroid
            | FeatureKind::Bandwidth
            | FeatureKind::Flatness
            | FeatureKind::Rolloff
            | FeatureKind::Zcr
            | FeatureKind::Loudness
            | FeatureKind::Pitch => 1,
        }
    }

    /// 1-based position in the canonical order.
    pub fn index(self) -> usize {
        FeatureKind::ALL.iter().position(|&k| k == self).expect("listed") + 1
    }

    /// `"f1"` .. `"f16"`.
    pub fn label(self) -> String {
        format!("f{}", self.index())
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::BandPower => "band_power",
            FeatureKind::CqtChroma => "cqt_chroma",
            FeatureKind::ChromaCens => "chroma_cens",
            FeatureKind::Mel => "mel",
            FeatureKind::Rms => "rms",
            FeatureKind::Centroid => "centroid",
            FeatureKind::Bandwidth => "bandwidth",
            FeatureKind::Contrast => "contrast",
            FeatureKind::Flatness => "flatness",
            FeatureKind::Rolloff => "rolloff",
            FeatureKind::Poly => "poly",
            FeatureKind::Tonnetz => "tonnetz",
            FeatureKind::Zcr => "zcr",
            FeatureKind::Tempogram => "tempogram",
            FeatureKind::Loudness => "loudness",
            FeatureKind::Pitch => "pitch",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Accepts `f1`..`f16` or the snake-case name.
impl FromStr for FeatureKind {
    type Err = AcousticError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        if let Some(n) = t.strip_prefix('f').and_then(|d| d.parse::<usize>().ok()) {
            if (1..=16).contains(&n) {
                return Ok(FeatureKind::ALL[n - 1]);
            }
        }
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.name() == t)
            .ok_or_else(|| AcousticError::UnknownKind(s.to_string()))
    }
}

/// Tunable constants of the extractors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcousticParams {
    pub fft_size: usize,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub mel_fmax_hz: f64,
    pub cqt_q: f64,
    pub rolloff_fraction: f64,
    pub contrast_quantile: f64,
    pub contrast_low_hz: f64,
    pub cens_smoothing: usize,
    pub pitch_min_hz: f64,
    pub pitch_max_hz: f64,
    pub voicing_threshold: f64,
}

impl Default for AcousticParams {
    fn default() -> Self {
        AcousticParams {
            fft_size: 1024,
            band_lo_hz: 50.0,
            band_hi_hz: 7500.0,
            mel_fmax_hz: 7500.0,
            cqt_q: 17.0,
            rolloff_fraction: 0.85,
            contrast_quantile: 0.2,
            contrast_low_hz: 200.0,
            cens_smoothing: 41,
            pitch_min_hz: 60.0,
            pitch_max_hz: 400.0,
            voicing_threshold: 0.3,
        }
    }
}

impl AcousticParams {
    pub fn validate(&self, sample_rate_hz: u32) -> Result<(), AcousticError> {
        let nyq = sample_rate_hz as f64 / 2.0;
        let bad = |m: &str| Err(AcousticError::InvalidParams(m.to_string()));
        if self.fft_size < 64 || !self.fft_size.is_power_of_two() {
            return bad("fft_size must be a power of two >= 64");
        }
        if !(0.0 < self.band_lo_hz && self.band_lo_hz < self.band_hi_hz && self.band_hi_hz <= nyq) {
            return bad("need 0 < band_lo_hz < band_hi_hz <= fs/2");
        }
        if !(self.mel_fmax_hz > 0.0 && self.mel_fmax_hz <= nyq) {
            return bad("mel_fmax_hz must be in (0, fs/2]");
        }
        if !(self.cqt_q > 1.0) {
            return bad("cqt_q must exceed 1");
        }
        if !(0.0 < self.rolloff_fraction && self.rolloff_fraction < 1.0) {
            return bad("rolloff_fraction must be in (0, 1)");
        }
        if !(0.0 < self.contrast_quantile && self.contrast_quantile <= 0.5) {
            return bad("contrast_quantile must be in (0, 0.5]");
        }
        if !(self.contrast_low_hz > 0.0 && self.contrast_low_hz * 32.0 <= nyq * 1.5) {
            return bad("contrast_low_hz must leave room for six octave bands");
        }
        if self.cens_smoothing == 0 {
            return bad("cens_smoothing must be at least 1");
        }
        if !(0.0 < self.pitch_min_hz && self.pitch_min_hz < self.pitch_max_hz && self.pitch_max_hz < nyq) {
            return bad("need 0 < pitch_min_hz < pitch_max_hz < fs/2");
        }
        if sample_rate_hz as f64 / self.pitch_min_hz >= self.fft_size as f64 / 2.0 {
            return bad("fft_size too short for pitch_min_hz");
        }
        Ok(())
    }
}

/// Shared framing of one clip.
pub struct Analysis<'a> {
    pub samples: &'a [f64],
    pub grid: FrameGrid,
    pub params: AcousticParams,
    pub spec: PowerSpectrogram,
    /// Unwindowed centred frames of `fft_size` samples.
    pub frames: Vec<Vec<f64>>,
}

impl<'a> Analysis<'a> {
    pub fn new(samples: &'a [f64], sample_rate_hz: u32, params: &AcousticParams) -> Result<Self, AcousticError> {
        params.validate(sample_rate_hz)?;
        let grid = frame_grid_for_rate(sample_rate_hz, FEATURE_RATE_HZ)?;
        if samples.len() < params.fft_size {
            return Err(AcousticError::ClipTooShort {
                needed: params.fft_size,
                got: samples.len(),
            });
        }
        let spec = stft_power(samples, params.fft_size, grid.hop, sample_rate_hz)?;
        let frames = centered_frames(samples, params.fft_size, grid.hop);
        debug_assert_eq!(frames.len(), spec.frames());
        Ok(Analysis {
            samples,
            grid,
            params: params.clone(),
            spec,
            frames,
        })
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.spec.sample_rate_hz
    }

    pub fn frame_count(&self) -> usize {
        self.spec.frames()
    }

    pub fn extract(&self, kind: FeatureKind) -> Array2<f64> {
        let out = match kind {
            FeatureKind::BandPower => band_power(self),
            FeatureKind::CqtChroma => cqt_chroma(self),
            FeatureKind::ChromaCens => chroma_cens(self),
            FeatureKind::Mel => mel_spectrogram(self),
            FeatureKind::Rms => frame_rms(self),
            FeatureKind::Centroid => spectral_centroid(self),
            FeatureKind::Bandwidth => spectral_bandwidth(self),
            FeatureKind::Contrast => spectral_contrast(self),
            FeatureKind::Flatness => spectral_flatness(self),
            FeatureKind::Rolloff => spectral_rolloff(self),
            FeatureKind::Poly => poly_coeffs(self),
            FeatureKind::Tonnetz => tonnetz(self),
            FeatureKind::Zcr => frame_zcr(self),
            FeatureKind::Tempogram => tempogram(self),
            FeatureKind::Loudness => loudness(self),
            FeatureKind::Pitch => pitch_track(self),
        };
        assert_eq!(out.ncols(), kind.dim(), "{kind} produced the wrong width");
        assert_eq!(out.nrows(), self.frame_count(), "{kind} produced the wrong frame count");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub kind: FeatureKind,
    pub data: Array2<f64>,
    pub grid: FrameGrid,
}

impl FeatureSequence {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }
}

/// All sixteen kinds of one clip, in canonical order, equal frame counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticSet {
    pub sequences: Vec<FeatureSequence>,
}

impl AcousticSet {
    pub fn get(&self, kind: FeatureKind) -> &FeatureSequence {
        &self.sequences[kind.index() - 1]
    }

    pub fn frames(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.frames())
    }

    pub fn total_dim(&self) -> usize {
        self.sequences.iter().map(|s| s.data.ncols()).sum()
    }

    /// `frames × 571` matrix in canonical column order.
    pub fn concatenated(&self) -> Array2<f64> {
        let views: Vec<_> = self.sequences.iter().map(|s| s.data.view()).collect();
        concatenate(Axis(1), &views).expect("equal frame counts")
    }

    pub fn truncate(&mut self, frames: usize) {
        for s in &mut self.sequences {
            if s.data.nrows() > frames {
                s.data = s.data.slice(ndarray::s![..frames, ..]).to_owned();
            }
        }
    }
}

pub fn extract_kind(
    samples: &[f64],
    sample_rate_hz: u32,
    kind: FeatureKind,
    params: &AcousticParams,
) -> Result<FeatureSequence, AcousticError> {
    let a = Analysis::new(samples, sample_rate_hz, params)?;
    Ok(FeatureSequence {
        kind,
        data: a.extract(kind),
        grid: a.grid,
    })
}

pub fn extract_acoustic_set(
    samples: &[f64],
    sample_rate_hz: u32,
    params: &AcousticParams,
) -> Result<AcousticSet, AcousticError> {
    let a = Analysis::new(samples, sample_rate_hz, params)?;
    let sequences: Vec<FeatureSequence> = FeatureKind::ALL
        .into_iter()
        .map(|kind| FeatureSequence {
            kind,
            data: a.extract(kind),
            grid: a.grid,
        })
        .collect();
    let frames = sequences.iter().map(|s| s.frames()).min().unwrap_or(0);
    let mut set = AcousticSet { sequences };
    set.truncate(frames);
    Ok(set)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureIndexEntry {
    pub label: String,
    pub kind: FeatureKind,
    pub dim: usize,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureIndex {
    pub trial: String,
    pub sample_rate_hz: u32,
    pub hop: usize,
    pub effective_rate_hz: f64,
    pub frames: usize,
    pub total_dim: usize,
    pub kinds: Vec<FeatureIndexEntry>,
}

/// Writes `{trial}_{fN}_{name}.csv` per kind and `{trial}_index.json`
/// into `dir`.
pub fn dump_acoustic_set(set: &AcousticSet, trial: &str, dir: &Path) -> Result<FeatureIndex, AcousticError> {
    let io = |path: &Path, source| AcousticError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut kinds = Vec::new();
    for seq in &set.sequences {
        let file = format!("{trial}_{}_{}.csv", seq.kind.label(), seq.kind.name());
        let header: Vec<String> = (0..seq.data.ncols()).map(|j| format!("{}_{j}", seq.kind.name())).collect();
        let path = dir.join(&file);
        write_matrix_csv(&path, &header, &seq.data).map_err(|e| io(&path, e))?;
        kinds.push(FeatureIndexEntry {
            label: seq.kind.label(),
            kind: seq.kind,
            dim: seq.kind.dim(),
            file,
        });
    }
    let grid = set.sequences.first().map(|s| s.grid);
    let index = FeatureIndex {
        trial: trial.to_string(),
        sample_rate_hz: grid.map_or(0, |g| g.sample_rate_hz),
        hop: grid.map_or(0, |g| g.hop),
        effective_rate_hz: grid.map_or(0.0, |g| g.effective_rate_hz()),
        frames: set.frames(),
        total_dim: set.total_dim(),
        kinds,
    };
    let path = dir.join(format!("{trial}_index.json"));
    let text = serde_json::to_string_pretty(&index).expect("serializable");
    std::fs::write(&path, text).map_err(|e| io(&path, e))?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stft_frame_count;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    pub(super) fn sine(f: f64, amp: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * f * i as f64 / 15000.0).sin()).collect()
    }

    #[test]
    fn dimension_table() {
        let dims: Vec<usize> = FeatureKind::ALL.iter().map(|k| k.dim()).collect();
        assert_eq!(dims, vec![12, 12, 12, 128, 1, 1, 1, 7, 1, 1, 2, 6, 1, 384, 1, 1]);
        assert_eq!(dims.iter().sum::<usize>(), TOTAL_ACOUSTIC_DIM);
        assert_eq!(FeatureKind::Mel.label(), "f4");
        assert_eq!("f16".parse::<FeatureKind>().unwrap(), FeatureKind::Pitch);
        assert_eq!("chroma_cens".parse::<FeatureKind>().unwrap(), FeatureKind::ChromaCens);
        assert!("f17".parse::<FeatureKind>().is_err());
    }

    #[test]
    fn full_set_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..15000).map(|i| {
            0.5 * (2.0 * PI * 150.0 * i as f64 / 15000.0).sin() + 0.05 * rng.random_range(-1.0..1.0)
        }).collect();
        let set = extract_acoustic_set(&x, 15000, &AcousticParams::default()).unwrap();
        assert_eq!(set.sequences.len(), 16);
        assert_eq!(set.total_dim(), 571);
        let frames = stft_frame_count(15000, 484);
        assert!(set.sequences.iter().all(|s| s.frames() == frames));
        assert!(set.concatenated().iter().all(|v| v.is_finite()));
        assert_eq!(set.concatenated().dim(), (frames, 571));
    }

    #[test]
    fn short_clip_rejected() {
        assert!(matches!(
            extract_acoustic_set(&[0.0; 1000], 15000, &AcousticParams::default()),
            Err(AcousticError::ClipTooShort { .. })
        ));
    }

    #[test]
    fn amplitude_scaling_properties() {
        let x: Vec<f64> = (0..30000)
            .map(|i| {
                let t = i as f64 / 15000.0;
                (1..=5).map(|k| (2.0 * PI * 220.0 * k as f64 * t).sin() / k as f64).sum::<f64>() * 0.3
            })
            .collect();
        let half: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        let p = AcousticParams::default();
        let a = extract_acoustic_set(&x, 15000, &p).unwrap();
        let b = extract_acoustic_set(&half, 15000, &p).unwrap();
        let argmax = |row: ndarray::ArrayView1<f64>| {
            row.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0
        };
        for m in 5..a.frames() - 5 {
            let ca = a.get(FeatureKind::CqtChroma).data.row(m);
            let cb = b.get(FeatureKind::CqtChroma).data.row(m);
            assert_eq!(argmax(ca), argmax(cb));
            let ta = a.get(FeatureKind::Tonnetz).data.row(m).to_owned();
            let tb = b.get(FeatureKind::Tonnetz).data.row(m).to_owned();
            let cos = ta.dot(&tb) / (ta.dot(&ta).sqrt() * tb.dot(&tb).sqrt());
            assert!(cos > 0.999, "tonnetz cos {cos}");
            for kind in [FeatureKind::Flatness, FeatureKind::Centroid, FeatureKind::Rolloff, FeatureKind::Pitch] {
                let va = a.get(kind).data[[m, 0]];
                let vb = b.get(kind).data[[m, 0]];
                assert!((va - vb).abs() <= 1e-6 * va.abs().max(1.0), "{kind}: {va} vs {vb}");
            }
            let ra = a.get(FeatureKind::Rms).data[[m, 0]];
            let rb = b.get(FeatureKind::Rms).data[[m, 0]];
            assert!((rb / ra - 0.5).abs() < 1e-12);
            let la = a.get(FeatureKind::Loudness).data[[m, 0]];
            let lb = b.get(FeatureKind::Loudness).data[[m, 0]];
            assert!((lb - la + 6.0206).abs() < 1e-3, "{la} {lb}");
        }
    }

    #[test]
    fn dump_writes_index() {
        let x = sine(440.0, 0.5, 8000);
        let set = extract_acoustic_set(&x, 15000, &AcousticParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let index = dump_acoustic_set(&set, "t1", dir.path()).unwrap();
        assert_eq!(index.kinds.len(), 16);
        assert_eq!(index.hop, 484);
        assert_eq!(index.total_dim, 571);
        assert!(dir.path().join("t1_f14_tempogram.csv").exists());
        assert!(dir.path().join("t1_index.json").exists());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn frame_count_matches_stft(len in 1024usize..6000) {
            let x: Vec<f64> = (0..len).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
            let set = extract_acoustic_set(&x, 15000, &AcousticParams::default()).unwrap();
            prop_assert_eq!(set.frames(), stft_frame_count(len, 484));
        }
    }
}
