//! Log-power spectrogram export as CSV and PGM.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{io_err, EvalError};
use crate::dsp::stft_power;

/// Lowest level kept, in dB relative to the spectrogram maximum.
pub const DB_FLOOR: f64 = -80.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramExport {
    pub csv_path: PathBuf,
    pub pgm_path: PathBuf,
    /// Frames × bins, dB relative to the maximum, clipped at [`DB_FLOOR`].
    pub db: Array2<f64>,
}

/// `10 log10(P / max P)` clipped below at −80 dB; all-zero power maps to
/// the floor everywhere.
pub fn log_power_db(power: &Array2<f64>) -> Array2<f64> {
    let max = power.iter().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Array2::from_elem(power.dim(), DB_FLOOR);
    }
    power.mapv(|p| {
        if p <= 0.0 {
            DB_FLOOR
        } else {
            (10.0 * (p / max).log10()).max(DB_FLOOR)
        }
    })
}

/// Writes `{prefix}.csv` (one row per frame, one column per bin, dB) and
/// `{prefix}.pgm` (binary greyscale, time left to right, frequency bottom
/// to top, black at −80 dB and white at the maximum).
pub fn export_spectrogram(
    wave: &[f64],
    sample_rate_hz: u32,
    fft_size: usize,
    hop: usize,
    out_prefix: &Path,
) -> Result<SpectrogramExport, EvalError> {
    let spec = stft_power(wave, fft_size, hop, sample_rate_hz).map_err(|e| EvalError::Trial {
        trial: out_prefix.display().to_string(),
        message: e.to_string(),
    })?;
    let db = log_power_db(&spec.power);
    let csv_path = out_prefix.with_extension("csv");
    let pgm_path = out_prefix.with_extension("pgm");

    let header: Vec<String> = spec.bin_freqs().iter().map(|f| format!("{f:.3}Hz")).collect();
    crate::textfmt::write_matrix_csv(&csv_path, &header, &db).map_err(io_err(&csv_path))?;

    let (frames, bins) = db.dim();
    let pgm_for_err = pgm_path.clone();
    let io = io_err(&pgm_for_err);
    let mut w = std::io::BufWriter::new(std::fs::File::create(&pgm_path).map_err(&io)?);
    write!(w, "P5\n{frames} {bins}\n255\n").map_err(&io)?;
    let mut row = vec![0u8; frames];
    for k in (0..bins).rev() {
        for (m, px) in row.iter_mut().enumerate() {
            *px = ((db[[m, k]] - DB_FLOOR) / -DB_FLOOR * 255.0).round().clamp(0.0, 255.0) as u8;
        }
        w.write_all(&row).map_err(&io)?;
    }
    w.flush().map_err(&io)?;
    Ok(SpectrogramExport { csv_path, pgm_path, db })
}
