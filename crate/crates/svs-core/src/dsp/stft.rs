//! Short-time Fourier analysis and the features derived from it.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{StftConfig, MEL_LOG_FLOOR};
use crate::corpus::Waveform;
use crate::error::Result;

/// One-sided complex STFT, row-major frames x bins.
#[derive(Debug, Clone)]
pub struct Stft {
    pub n_frames: usize,
    pub n_bins: usize,
    data: Vec<Complex<f32>>,
}

impl Stft {
    pub fn frame(&self, t: usize) -> &[Complex<f32>] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn magnitudes(&self) -> Vec<f32> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

/// Windowed one-sided STFT with no centering: frame t covers samples
/// [t*hop, t*hop + wl). A waveform shorter than one window is zero-padded
/// into a single frame.
pub fn stft(waveform: &Waveform, cfg: &StftConfig) -> Result<Stft> {
    cfg.validate()?;
    let samples = &waveform.samples;
    let n_frames = cfg.n_frames(samples.len());
    let n_bins = cfg.n_bins();
    let window = cfg.window_coefficients();

    let mut planner = FftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let mut data = Vec::with_capacity(n_frames * n_bins);

    for t in 0..n_frames {
        let start = t * cfg.hop_length;
        buf.fill(Complex::new(0.0, 0.0));
        for i in 0..cfg.window_length {
            if let Some(&s) = samples.get(start + i) {
                buf[i] = Complex::new(s * window[i], 0.0);
            }
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..n_bins]);
    }

    Ok(Stft { n_frames, n_bins, data })
}

/// Ground-truth frame energy: the L2 norm of each frame's bin magnitudes.
pub fn frame_energy(stft: &Stft) -> Vec<f32> {
    (0..stft.n_frames)
        .map(|t| {
            let acc: f64 = stft.frame(t).iter().map(|c| c.norm_sqr() as f64).sum();
            acc.sqrt() as f32
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct MelParams {
    pub n_mels: usize,
    pub fmin: f32,
    pub fmax: f32,
}

impl Default for MelParams {
    fn default() -> Self {
        Self { n_mels: 80, fmin: 0.0, fmax: 12_000.0 }
    }
}

fn hz_to_mel(f: f32) -> f32 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f32) -> f32 {
    700.0 * (10f32.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, row-major n_mels x n_bins, applied to the power
/// spectrum. Filters that would round to an empty bin set get a unit weight at
/// their center bin so no band can silently vanish.
pub fn mel_filterbank(cfg: &StftConfig, params: &MelParams) -> Vec<f32> {
    let n_bins = cfg.n_bins();
    let lo = hz_to_mel(params.fmin);
    let hi = hz_to_mel(params.fmax.min(cfg.sample_rate as f32 / 2.0));
    let edges: Vec<f32> = (0..params.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f32 / (params.n_mels + 1) as f32))
        .collect();
    let bin_hz = cfg.sample_rate as f32 / cfg.fft_size as f32;

    let mut bank = vec![0.0f32; params.n_mels * n_bins];
    for m in 0..params.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut bank[m * n_bins..(m + 1) * n_bins];
        let mut nonzero = false;
        for k in 0..n_bins {
            let f = k as f32 * bin_hz;
            let w = if f <= center {
                (f - left) / (center - left)
            } else {
                (right - f) / (right - center)
            };
            if w > 0.0 {
                row[k] = w;
                nonzero = true;
            }
        }
        if !nonzero {
            let k = ((center / bin_hz).round() as usize).min(n_bins - 1);
            row[k] = 1.0;
        }
    }
    bank
}

/// Log-compressed mel spectrogram, row-major frames x n_mels. Band energies
/// come from the power spectrum and are floored before the log.
pub fn mel_spectrogram(waveform: &Waveform, cfg: &StftConfig, params: &MelParams) -> Result<Vec<f32>> {
    let spec = stft(waveform, cfg)?;
    let bank = mel_filterbank(cfg, params);
    Ok(mel_from_stft(&spec, &bank, params.n_mels))
}

pub fn mel_from_stft(spec: &Stft, bank: &[f32], n_mels: usize) -> Vec<f32> {
    let n_bins = spec.n_bins;
    let mut out = Vec::with_capacity(spec.n_frames * n_mels);
    for t in 0..spec.n_frames {
        let frame = spec.frame(t);
        for m in 0..n_mels {
            let row = &bank[m * n_bins..(m + 1) * n_bins];
            let mut acc = 0.0f64;
            for (k, c) in frame.iter().enumerate() {
                if row[k] != 0.0 {
                    acc += row[k] as f64 * c.norm_sqr() as f64;
                }
            }
            out.push((acc.max(MEL_LOG_FLOOR as f64) as f32).ln());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::WindowKind;

    fn wave(samples: Vec<f32>) -> Waveform {
        Waveform::new(samples, 24_000).unwrap()
    }

    fn sine(freq: f32, n: usize, sr: f32) -> Vec<f32> {
        (0..n)
            .map(|i| (2.0 * std::f32::consts::PI * freq * i as f32 / sr).sin() * 0.8)
            .collect()
    }

    #[test]
    fn zero_waveform_gives_zero_magnitudes() {
        let s = stft(&wave(vec![0.0; 4096]), &StftConfig::default()).unwrap();
        assert!(s.magnitudes().iter().all(|m| *m == 0.0));
    }

    #[test]
    fn window_sized_waveform_is_one_frame() {
        let cfg = StftConfig::default();
        let s = stft(&wave(vec![0.1; 1024]), &cfg).unwrap();
        assert_eq!(s.n_frames, 1);
        assert_eq!(s.n_bins, 513);
    }

    #[test]
    fn bin_center_sine_concentrates_energy_with_rect_window() {
        // bin 32 of a 1024-point FFT at 24 kHz sits at 750 Hz exactly
        let cfg = StftConfig { window: WindowKind::Rect, ..StftConfig::default() };
        let freq = 32.0 * 24_000.0 / 1024.0;
        let s = stft(&wave(sine(freq, 4096, 24_000.0)), &cfg).unwrap();
        let frame = s.frame(1);
        let total: f32 = frame.iter().map(|c| c.norm_sqr()).sum();
        assert!(frame[32].norm_sqr() / total > 0.9, "got {}", frame[32].norm_sqr() / total);
    }

    #[test]
    fn bin_center_sine_stays_within_one_bin_of_center_with_hann() {
        let cfg = StftConfig::default();
        let freq = 32.0 * 24_000.0 / 1024.0;
        let s = stft(&wave(sine(freq, 4096, 24_000.0)), &cfg).unwrap();
        let frame = s.frame(1);
        let total: f32 = frame.iter().map(|c| c.norm_sqr()).sum();
        let main: f32 = (31..=33).map(|k| frame[k].norm_sqr()).sum();
        assert!(main / total > 0.95, "got {}", main / total);
    }

    #[test]
    fn gain_scales_magnitudes_linearly() {
        let cfg = StftConfig::default();
        let base = sine(440.0, 4096, 24_000.0);
        let half: Vec<f32> = base.iter().map(|s| s * 0.5).collect();
        let a = stft(&wave(base), &cfg).unwrap().magnitudes();
        let b = stft(&wave(half), &cfg).unwrap().magnitudes();
        for (x, y) in a.iter().zip(&b) {
            assert!((x * 0.5 - y).abs() <= 1e-6 * x.abs().max(1.0));
        }
    }

    #[test]
    fn frame_energy_of_zero_frame_is_zero() {
        let s = stft(&wave(vec![0.0; 2048]), &StftConfig::default()).unwrap();
        assert!(frame_energy(&s).iter().all(|e| *e == 0.0));
    }

    #[test]
    fn frame_energy_matches_brute_force() {
        let cfg = StftConfig::default();
        let noise: Vec<f32> = (0..8192)
            .map(|i| ((i as f32 * 12.9898).sin() * 43758.547).fract() - 0.5)
            .collect();
        let s = stft(&wave(noise), &cfg).unwrap();
        let fast = frame_energy(&s);
        for t in 0..s.n_frames {
            let brute: f64 = s
                .frame(t)
                .iter()
                .map(|c| (c.re as f64) * (c.re as f64) + (c.im as f64) * (c.im as f64))
                .sum::<f64>()
                .sqrt();
            assert!((fast[t] as f64 - brute).abs() <= 1e-6 * brute.max(1e-12));
        }
    }

    #[test]
    fn mel_of_silence_sits_at_the_log_floor() {
        let cfg = StftConfig::default();
        let mel = mel_spectrogram(&wave(vec![0.0; 4096]), &cfg, &MelParams::default()).unwrap();
        let floor = MEL_LOG_FLOOR.ln();
        assert!(mel.iter().all(|m| (*m - floor).abs() < 1e-6));
    }

    #[test]
    fn mel_sum_is_monotone_in_gain() {
        let cfg = StftConfig::default();
        let base = sine(440.0, 4096, 24_000.0);
        let loud: Vec<f32> = base.iter().map(|s| (s * 1.2).clamp(-1.0, 1.0)).collect();
        let quiet: Vec<f32> = base.iter().map(|s| s * 0.3).collect();
        let p = MelParams::default();
        let sum = |w: Vec<f32>| -> f32 { mel_spectrogram(&wave(w), &cfg, &p).unwrap().iter().sum() };
        let (lo, mid, hi) = (sum(quiet), sum(base), sum(loud));
        assert!(lo < mid && mid < hi);
    }

    #[test]
    fn every_filter_has_weight() {
        let bank = mel_filterbank(&StftConfig::default(), &MelParams::default());
        let n_bins = StftConfig::default().n_bins();
        for m in 0..80 {
            assert!(bank[m * n_bins..(m + 1) * n_bins].iter().any(|w| *w > 0.0), "band {m} empty");
        }
    }
}
