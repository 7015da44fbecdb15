//! Differentiable STFT-mel path used by the reconstruction loss: frames are
//! gathered with narrow/stack and projected against fixed windowed DFT bases
//! by matmul, the filterbank by another matmul. Framing and filter weights
//! match the analysis pipeline exactly, so the loss target and the cached
//! features agree. Everything stays on gather/matmul ops whose backward
//! passes are sound on this backend.

use candle_core::{DType, Device, Tensor};

use svs_core::config::MelConfig;
use svs_core::dsp::{mel_filterbank, MelParams, StftConfig, MEL_LOG_FLOOR};

use crate::error::Result;

pub struct MelAnalyzer {
    /// [wl, 2*bins] windowed DFT bases, cos block then sin block.
    dft: Tensor,
    /// [bins, n_mels] filterbank.
    mel: Tensor,
    hop: usize,
    window_length: usize,
    n_bins: usize,
    pub n_mels: usize,
}

impl MelAnalyzer {
    pub fn new(stft: &StftConfig, mel: &MelConfig, device: &Device, dtype: DType) -> Result<Self> {
        let n_bins = stft.n_bins();
        let wl = stft.window_length;
        let window = stft.window_coefficients();

        // column k holds basis k so framed samples [.., wl] matmul directly
        let mut basis = vec![0f64; wl * 2 * n_bins];
        for k in 0..n_bins {
            for n in 0..wl {
                let angle = -2.0 * std::f64::consts::PI * (k * n) as f64 / stft.fft_size as f64;
                basis[n * 2 * n_bins + k] = angle.cos() * window[n] as f64;
                basis[n * 2 * n_bins + n_bins + k] = angle.sin() * window[n] as f64;
            }
        }
        let dft = Tensor::from_vec(basis, &[wl, 2 * n_bins], device)?.to_dtype(dtype)?;

        let params = MelParams { n_mels: mel.n_mels, fmin: mel.fmin, fmax: mel.fmax };
        let bank = mel_filterbank(stft, &params); // row-major n_mels x bins
        let mel_w = Tensor::from_vec(bank, &[mel.n_mels, n_bins], device)?
            .to_dtype(dtype)?
            .t()?
            .contiguous()?;

        Ok(Self { dft, mel: mel_w, hop: stft.hop_length, window_length: wl, n_bins, n_mels: mel.n_mels })
    }

    /// Frames a [B, L] waveform can produce without padding.
    pub fn frames_for_samples(&self, len: usize) -> usize {
        if len < self.window_length {
            0
        } else {
            (len - self.window_length) / self.hop + 1
        }
    }

    /// [B, L] -> framed [B, T, wl].
    fn frames(&self, waveform: &Tensor) -> Result<Tensor> {
        let (_, l) = waveform.dims2()?;
        let t = self.frames_for_samples(l);
        let mut rows = Vec::with_capacity(t);
        for i in 0..t {
            rows.push(waveform.narrow(1, i * self.hop, self.window_length)?);
        }
        Ok(Tensor::stack(&rows, 1)?)
    }

    /// Power spectrum [B, T, bins] of a [B, L] waveform batch.
    pub fn power(&self, waveform: &Tensor) -> Result<Tensor> {
        let spec = self.frames(waveform)?.broadcast_matmul(&self.dft)?; // [B,T,2*bins]
        let re = spec.narrow(2, 0, self.n_bins)?;
        let im = spec.narrow(2, self.n_bins, self.n_bins)?;
        Ok((re.sqr()? + im.sqr()?)?)
    }

    /// Log-compressed mel [B, n_mels, T].
    pub fn mel(&self, waveform: &Tensor) -> Result<Tensor> {
        let power = self.power(waveform)?;
        let bands = power.broadcast_matmul(&self.mel)?; // [B,T,mels]
        let floored = bands.clamp(MEL_LOG_FLOOR as f64, f64::INFINITY)?;
        Ok(floored.log()?.transpose(1, 2)?.contiguous()?)
    }

    /// Frame energy [B, T]: L2 norm of the magnitude spectrum per frame.
    pub fn energy(&self, waveform: &Tensor) -> Result<Tensor> {
        Ok(self.power(waveform)?.sum(2)?.sqrt()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use svs_core::corpus::Waveform;
    use svs_core::dsp;

    #[test]
    fn matches_the_fft_pipeline() {
        let stft = StftConfig::default();
        let mel_cfg = MelConfig::default();
        let analyzer = MelAnalyzer::new(&stft, &mel_cfg, &Device::Cpu, DType::F32).unwrap();

        let n = 1024 + 256 * 9;
        let samples: Vec<f32> = (0..n)
            .map(|i| {
                let t = i as f32 / 24_000.0;
                (2.0 * std::f32::consts::PI * 311.0 * t).sin() * 0.5
                    + (2.0 * std::f32::consts::PI * 880.0 * t).sin() * 0.2
            })
            .collect();
        let wave = Waveform::new(samples.clone(), 24_000).unwrap();

        let reference = dsp::mel_spectrogram(
            &wave,
            &stft,
            &dsp::MelParams { n_mels: 80, fmin: 0.0, fmax: 12_000.0 },
        )
        .unwrap();
        let t = stft.n_frames(n);

        let x = Tensor::from_vec(samples, &[1, n], &Device::Cpu).unwrap();
        let ours = analyzer.mel(&x).unwrap(); // [1, 80, T]
        assert_eq!(ours.dims(), &[1, 80, t]);
        let ours: Vec<Vec<f32>> = ours.squeeze(0).unwrap().to_vec2().unwrap();

        let mut max_err = 0.0f32;
        for (m, row) in ours.iter().enumerate() {
            for (frame, v) in row.iter().enumerate() {
                let r = reference[frame * 80 + m];
                max_err = max_err.max((v - r).abs());
            }
        }
        assert!(max_err < 5e-3, "max log-mel deviation {max_err}");
    }

    #[test]
    fn energy_matches_the_fft_pipeline() {
        let stft = StftConfig::default();
        let analyzer = MelAnalyzer::new(&stft, &MelConfig::default(), &Device::Cpu, DType::F32).unwrap();
        let n = 4096;
        let samples: Vec<f32> = (0..n)
            .map(|i| ((i as f32 * 0.71).sin() * 0.4) + ((i as f32 * 1.37).cos() * 0.1))
            .collect();
        let wave = Waveform::new(samples.clone(), 24_000).unwrap();
        let spec = dsp::stft(&wave, &stft).unwrap();
        let reference = dsp::frame_energy(&spec);

        let x = Tensor::from_vec(samples, &[1, n], &Device::Cpu).unwrap();
        let ours: Vec<f32> = analyzer.energy(&x).unwrap().squeeze(0).unwrap().to_vec1().unwrap();
        assert_eq!(ours.len(), reference.len());
        for (a, b) in ours.iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-3 * b.max(1.0), "{a} vs {b}");
        }
    }
}
