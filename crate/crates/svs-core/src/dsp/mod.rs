//! Frame-level signal analysis: STFT, linear/mel spectrograms, the L2-norm
//! frame energy used as the energy-predictor target, and F0 extraction.
//!
//! Framing follows the note-duration convention used on the score side:
//! `frames = floor((len - wl)/hl) + 1` with no centering, so every feature
//! of one waveform shares one frame count.

mod pitch;
mod stft;

pub use pitch::{extract_f0, F0Params};
pub use stft::{frame_energy, mel_filterbank, mel_from_stft, mel_spectrogram, stft, MelParams, Stft};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MEL_LOG_FLOOR: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub window_length: usize,
    pub hop_length: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate: 24_000,
            fft_size: 1024,
            window_length: 1024,
            hop_length: 256,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop_length == 0 || self.window_length == 0 || self.fft_size == 0 || self.sample_rate == 0 {
            return Err(Error::ConfigInvalid("stft sizes must be positive".into()));
        }
        if !(self.hop_length <= self.window_length && self.window_length <= self.fft_size) {
            return Err(Error::ConfigInvalid(format!(
                "need hop <= window <= fft, got hop={} window={} fft={}",
                self.hop_length, self.window_length, self.fft_size
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a waveform of `len` samples; a short waveform still
    /// yields one (zero-padded) frame.
    pub fn n_frames(&self, len: usize) -> usize {
        if len <= self.window_length {
            1
        } else {
            (len - self.window_length) / self.hop_length + 1
        }
    }

    pub fn window_coefficients(&self) -> Vec<f32> {
        match self.window {
            WindowKind::Rect => vec![1.0; self.window_length],
            WindowKind::Hann => {
                let n = self.window_length as f32;
                (0..self.window_length)
                    .map(|i| 0.5 - 0.5 * (2.0 * std::f32::consts::PI * i as f32 / n).cos())
                    .collect()
            }
        }
    }
}

/// Frame-level ground truth for one utterance. All sequences share the frame
/// count; `lf0` is natural-log Hz on voiced frames and 0 elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub n_frames: usize,
    pub n_bins: usize,
    pub n_mels: usize,
    /// Row-major frames x bins linear magnitudes.
    pub linear_spec: Vec<f32>,
    /// Row-major frames x mels log-compressed band energies.
    pub mel_spec: Vec<f32>,
    pub energy: Vec<f32>,
    pub lf0: Vec<f32>,
    pub voicing: Vec<u8>,
}

impl FrameFeatures {
    pub fn validate(&self) -> Result<()> {
        let t = self.n_frames;
        if self.linear_spec.len() != t * self.n_bins
            || self.mel_spec.len() != t * self.n_mels
            || self.energy.len() != t
            || self.lf0.len() != t
            || self.voicing.len() != t
        {
            return Err(Error::ShapeMismatch(format!(
                "frame features disagree on frame count {t}: spec={} mel={} energy={} lf0={} voicing={}",
                self.linear_spec.len(),
                self.mel_spec.len(),
                self.energy.len(),
                self.lf0.len(),
                self.voicing.len()
            )));
        }
        if self.energy.iter().any(|e| *e < 0.0 || !e.is_finite()) {
            return Err(Error::ShapeMismatch("energy must be finite and non-negative".into()));
        }
        for (i, (&l, &v)) in self.lf0.iter().zip(&self.voicing).enumerate() {
            if v == 1 && l <= 0.0 {
                return Err(Error::ShapeMismatch(format!("voiced frame {i} carries lf0 {l}")));
            }
        }
        Ok(())
    }
}
