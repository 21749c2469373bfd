use std::path::Path;

use hound::{SampleFormat, WavSpec};

use super::{AudioClip, DataError};

/// Quantizes to 16-bit words: `round(x * 32767)` clamped to the i16 range.
pub fn quantize_sample(x: f64) -> i16 {
    (x * 32767.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn dequantize_sample(word: i16) -> f64 {
    word as f64 / 32768.0
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<(), DataError> {
    clip.validate()?;
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| DataError::wav(path, e))?;
    for &s in &clip.samples {
        writer
            .write_sample(quantize_sample(s))
            .map_err(|e| DataError::wav(path, e))?;
    }
    writer.finalize().map_err(|e| DataError::wav(path, e))
}

/// Reads a 16-bit PCM mono WAV, scaling words by `1/32768`.
pub fn read_wav(path: &Path) -> Result<AudioClip, DataError> {
    let reader = hound::WavReader::open(path).map_err(|e| DataError::wav(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(DataError::UnsupportedAudio(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(DataError::UnsupportedAudio(format!(
            "{}: {}-bit {:?}, expected 16-bit PCM",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(dequantize_sample))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| DataError::wav(path, e))?;
    let clip = AudioClip {
        sample_rate_hz: spec.sample_rate,
        samples,
    };
    clip.validate()?;
    Ok(clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn sine_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.wav");
        let clip = AudioClip {
            sample_rate_hz: 16000,
            samples: (0..16000)
                .map(|i| 0.9 * (2.0 * PI * 440.0 * i as f64 / 16000.0).sin())
                .collect(),
        };
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate_hz, 16000);
        let words: Vec<i16> = back.samples.iter().map(|&s| (s * 32768.0) as i16).collect();
        let expected: Vec<i16> = clip.samples.iter().map(|&s| quantize_sample(s)).collect();
        assert_eq!(words, expected);
    }

    #[test]
    fn zero_clip_writes_zero_words() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.wav");
        let clip = AudioClip {
            sample_rate_hz: 16000,
            samples: vec![0.0; 160],
        };
        write_wav(&path, &clip).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 44 + 320);
        assert!(bytes[44..].iter().all(|&b| b == 0));
    }

    #[test]
    fn rejects_stereo_and_wrong_depth() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("stereo.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&stereo), Err(DataError::UnsupportedAudio(_))));

        let deep = dir.path().join("deep.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&deep, spec).unwrap();
        w.write_sample(0i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&deep), Err(DataError::UnsupportedAudio(_))));
    }

    #[test]
    fn rejects_malformed_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.wav");
        std::fs::write(&path, b"RIFF\x10\x00\x00\x00WAVEjunkjunk").unwrap();
        assert!(matches!(read_wav(&path), Err(DataError::Wav { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn read_write_equals_quantize(samples in prop::collection::vec(-1.0f64..=1.0, 1..400)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.wav");
            let clip = AudioClip { sample_rate_hz: 8000, samples };
            write_wav(&path, &clip).unwrap();
            let back = read_wav(&path).unwrap();
            let expected: Vec<f64> = clip.samples.iter().map(|&s| dequantize_sample(quantize_sample(s))).collect();
            prop_assert_eq!(back.samples, expected);
        }
    }
}
