use serde::{Deserialize, Serialize};

use super::DspError;

/// Integer-hop frame grid approximating a target frame rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameGrid {
    pub sample_rate_hz: u32,
    pub hop: usize,
    pub window_len: usize,
    pub target_rate_hz: f64,
}

impl FrameGrid {
    pub fn effective_rate_hz(&self) -> f64 {
        self.sample_rate_hz as f64 / self.hop as f64
    }

    pub fn with_window(mut self, window_len: usize) -> Result<Self, DspError> {
        if window_len < self.hop {
            return Err(DspError::InvalidGrid(format!(
                "window {window_len} shorter than hop {}",
                self.hop
            )));
        }
        self.window_len = window_len;
        Ok(self)
    }
}

pub const FEATURE_RATE_HZ: f64 = 31.0;

/// `hop = round(fs / target)`, window equal to the hop.
pub fn frame_grid_for_rate(fs_hz: u32, target_rate_hz: f64) -> Result<FrameGrid, DspError> {
    if !(target_rate_hz > 0.0) || (fs_hz as f64) < target_rate_hz {
        return Err(DspError::InvalidGrid(format!(
            "sample rate {fs_hz} Hz is below the frame rate {target_rate_hz} Hz"
        )));
    }
    let hop = (fs_hz as f64 / target_rate_hz).round().max(1.0) as usize;
    let effective = fs_hz as f64 / hop as f64;
    if (effective - target_rate_hz).abs() >= 0.5 {
        return Err(DspError::InvalidGrid(format!(
            "no integer hop realizes {target_rate_hz} Hz at {fs_hz} Hz (nearest gives {effective:.3} Hz)"
        )));
    }
    Ok(FrameGrid {
        sample_rate_hz: fs_hz,
        hop,
        window_len: hop,
        target_rate_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eeg_and_audio_rates() {
        let g = frame_grid_for_rate(1000, 31.0).unwrap();
        assert_eq!(g.hop, 32);
        assert!((g.effective_rate_hz() - 31.25).abs() < 1e-12);
        let g = frame_grid_for_rate(15000, 31.0).unwrap();
        assert_eq!(g.hop, 484);
        assert!((g.effective_rate_hz() - 30.99).abs() < 0.01);
        let g = frame_grid_for_rate(31, 31.0).unwrap();
        assert_eq!(g.hop, 1);
        assert_eq!(g.window_len, 1);
    }

    #[test]
    fn rejects_unrealizable_rates() {
        assert!(frame_grid_for_rate(20, 31.0).is_err());
        // 100/3 = 33.3 Hz is too far from 31 Hz
        assert!(frame_grid_for_rate(100, 31.0).is_err());
    }

    #[test]
    fn window_must_cover_hop() {
        let g = frame_grid_for_rate(1000, 31.0).unwrap();
        assert!(g.with_window(16).is_err());
        assert_eq!(g.with_window(64).unwrap().window_len, 64);
    }
}
