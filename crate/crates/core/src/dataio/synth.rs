//! Synthetic paired EEG/audio generator.
//!
//! Each trial draws a smooth latent envelope `e(t)` in (0, 1). The audio is
//! a 65 Hz harmonic carrier amplitude-modulated by `e(t)` over a faint
//! white noise floor. Every EEG channel mixes pink background noise, a
//! scaled copy of `e(t)`, a frequency-following component (the carrier
//! fundamental, phase-locked to the audio and modulated by `e(t)`), 60 Hz
//! line noise and occasional frontal blink transients.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use super::{
    write_eeg, write_wav, AudioClip, Condition, DataError, DatasetManifest, EegRecording,
    ManifestEntry, AUDIO_RATE_HZ, EEG_CHANNELS, EEG_RATE_HZ, MANIFEST_FILE,
};
use crate::dsp::{design_butterworth_bandpass, filtfilt};
use crate::seed::{stage_rng, Stage};

pub const CARRIER_HZ: f64 = 65.0;
const HARMONICS: usize = 5;
const AUDIO_NOISE_FLOOR: f64 = 0.02;

const PINK_UV: f64 = 10.0;
const LATENT_UV: f64 = 20.0;
const FFR_UV: f64 = 15.0;
const LINE_UV: f64 = 5.0;
const BLINK_UV: f64 = 150.0;
const BLINK_RATE_HZ: f64 = 0.3;
const BLINK_LEN_S: f64 = 0.25;
const LATENT_BAND_HZ: (f64, f64) = (0.5, 4.0);
const LATENT_SLOPE: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_trials: usize,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_trials: 50,
            duration_s: 2.0,
            seed: 0,
        }
    }
}

/// A generated trial together with its hidden latent envelope (1000 Hz).
#[derive(Debug, Clone)]
pub struct SynthTrial {
    pub id: String,
    pub subject: u8,
    pub condition: Condition,
    pub latent: Vec<f64>,
    pub eeg: EegRecording,
    pub audio: AudioClip,
}

struct SubjectProfile {
    latent_gain: Vec<f64>,
    ffr_gain: Vec<f64>,
    line_phase: Vec<f64>,
}

impl SubjectProfile {
    fn draw(seed: u64, subject: u8) -> Self {
        let mut rng = stage_rng(seed, Stage::Data, &format!("subject-{subject}"));
        SubjectProfile {
            latent_gain: (0..EEG_CHANNELS).map(|_| rng.random_range(0.5..1.5)).collect(),
            ffr_gain: (0..EEG_CHANNELS).map(|_| rng.random_range(0.5..1.0)).collect(),
            line_phase: (0..EEG_CHANNELS).map(|_| rng.random_range(0.0..2.0 * PI)).collect(),
        }
    }
}

/// Paul Kellet's refined pink-noise filter over unit white noise, scaled to
/// unit standard deviation.
fn pink_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    const WARMUP: usize = 2000;
    let mut b = [0.0f64; 7];
    let mut out = Vec::with_capacity(n);
    for i in 0..n + WARMUP {
        let w: f64 = rng.sample(StandardNormal);
        b[0] = 0.99886 * b[0] + w * 0.0555179;
        b[1] = 0.99332 * b[1] + w * 0.0750759;
        b[2] = 0.96900 * b[2] + w * 0.1538520;
        b[3] = 0.86650 * b[3] + w * 0.3104856;
        b[4] = 0.55000 * b[4] + w * 0.5329522;
        b[5] = -0.7616 * b[5] - w * 0.0168980;
        let p = b.iter().sum::<f64>() + w * 0.5362;
        b[6] = w * 0.115926;
        if i >= WARMUP {
            out.push(p);
        }
    }
    normalize_std(&mut out);
    out
}

fn normalize_std(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    for v in x.iter_mut() {
        *v = (*v - mean) / sd.max(1e-12);
    }
}

/// Smooth envelope in (0, 1) sampled at 1000 Hz.
fn latent_envelope(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let margin = 2000;
    let white: Vec<f64> = (0..n + 2 * margin).map(|_| rng.sample(StandardNormal)).collect();
    let band = design_butterworth_bandpass(2, LATENT_BAND_HZ.0, LATENT_BAND_HZ.1, EEG_RATE_HZ as f64)
        .expect("static band is valid");
    let mut z = filtfilt(&band, &white).expect("long enough")[margin..margin + n].to_vec();
    normalize_std(&mut z);
    z.iter().map(|&v| 1.0 / (1.0 + (-LATENT_SLOPE * v).exp())).collect()
}

fn interpolate_linear(x: &[f64], factor: usize, n_out: usize) -> Vec<f64> {
    (0..n_out)
        .map(|i| {
            let pos = i as f64 / factor as f64;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            let a = x[j.min(x.len() - 1)];
            let b = x[(j + 1).min(x.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

fn blink_train(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let duration = n as f64 / EEG_RATE_HZ as f64;
    let count = Poisson::new(BLINK_RATE_HZ * duration)
        .map(|p| p.sample(rng) as usize)
        .unwrap_or(0);
    let len = (BLINK_LEN_S * EEG_RATE_HZ as f64) as usize;
    for _ in 0..count {
        let start = rng.random_range(0..n);
        for k in 0..len.min(n - start) {
            out[start + k] += BLINK_UV * (PI * k as f64 / len as f64).sin().powi(2);
        }
    }
    out
}

/// Generates one trial in memory.
pub fn synthesize_trial(
    seed: u64,
    id: &str,
    subject: u8,
    condition: Condition,
    duration_s: f64,
) -> SynthTrial {
    let profile = SubjectProfile::draw(seed, subject);
    let mut rng = stage_rng(seed, Stage::Data, id);
    let n_eeg = (duration_s * EEG_RATE_HZ as f64).round() as usize;
    let ratio = (AUDIO_RATE_HZ / EEG_RATE_HZ) as usize;
    let n_audio = n_eeg * ratio;

    let latent = latent_envelope(&mut rng, n_eeg);
    let latent_mean = latent.iter().sum::<f64>() / n_eeg as f64;
    let phase: f64 = rng.random_range(0.0..2.0 * PI);

    let mut audio: Vec<f64> = interpolate_linear(&latent, ratio, n_audio)
        .into_iter()
        .enumerate()
        .map(|(i, env)| {
            let t = i as f64 / AUDIO_RATE_HZ as f64;
            let carrier: f64 = (1..=HARMONICS)
                .map(|k| {
                    let k = k as f64;
                    (2.0 * PI * CARRIER_HZ * k * t + k * phase).sin() / (k * k)
                })
                .sum();
            env * carrier
        })
        .collect();
    let floor = Normal::new(0.0, AUDIO_NOISE_FLOOR).expect("positive sd");
    for v in &mut audio {
        *v += floor.sample(&mut rng);
    }
    let peak = audio.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in &mut audio {
        *v /= peak;
    }

    let blinks = blink_train(&mut rng, n_eeg);
    let mut data = Array2::zeros((EEG_CHANNELS, n_eeg));
    for c in 0..EEG_CHANNELS {
        let pink = pink_noise(&mut rng, n_eeg);
        let frontal = if c < 5 { 1.0 - 0.2 * c as f64 } else { 0.0 };
        for t in 0..n_eeg {
            let time = t as f64 / EEG_RATE_HZ as f64;
            let ffr = latent[t] * (2.0 * PI * CARRIER_HZ * time + phase).sin();
            data[[c, t]] = PINK_UV * pink[t]
                + LATENT_UV * profile.latent_gain[c] * (latent[t] - latent_mean)
                + FFR_UV * profile.ffr_gain[c] * ffr
                + LINE_UV * (2.0 * PI * 60.0 * time + profile.line_phase[c]).sin()
                + frontal * blinks[t];
        }
    }

    SynthTrial {
        id: id.to_string(),
        subject,
        condition,
        latent,
        eeg: EegRecording::new(data, EEG_RATE_HZ).expect("generated data is finite"),
        audio: AudioClip {
            sample_rate_hz: AUDIO_RATE_HZ,
            samples: audio,
        },
    }
}

pub fn trial_identity(index: usize) -> (String, u8, Condition) {
    let subject = (index % 4) as u8 + 1;
    let condition = if (index / 4).is_multiple_of(2) {
        Condition::Spoken
    } else {
        Condition::Listen
    };
    let id = format!("s{subject}-{}-{index:03}", condition.as_str());
    (id, subject, condition)
}

/// Writes `n_trials` paired files (`eeg/<id>.csv`, `wav/<id>.wav`) and a
/// `manifest.json` under `out_dir`.
pub fn generate_synthetic_dataset(
    cfg: &SynthConfig,
    out_dir: &Path,
) -> Result<DatasetManifest, DataError> {
    if cfg.n_trials == 0 {
        return Err(DataError::Synth("n_trials must be at least 1".into()));
    }
    if !(0.5..=10.0).contains(&cfg.duration_s) {
        return Err(DataError::Synth(format!(
            "duration {} s outside [0.5, 10]",
            cfg.duration_s
        )));
    }
    for sub in ["eeg", "wav"] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
    }
    let mut trials = Vec::with_capacity(cfg.n_trials);
    for index in 0..cfg.n_trials {
        let (id, subject, condition) = trial_identity(index);
        let trial = synthesize_trial(cfg.seed, &id, subject, condition, cfg.duration_s);
        let eeg_path = format!("eeg/{id}.csv");
        let wav_path = format!("wav/{id}.wav");
        write_eeg(&out_dir.join(&eeg_path), &trial.eeg)?;
        write_wav(&out_dir.join(&wav_path), &trial.audio)?;
        trials.push(ManifestEntry {
            id,
            subject,
            condition,
            eeg_path,
            wav_path,
            transcript: None,
        });
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        trials,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
