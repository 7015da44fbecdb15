//! Frame-synchronous F0 extraction with a YIN-style cumulative mean
//! normalized difference function, FFT-accelerated.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::StftConfig;
use crate::corpus::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct F0Params {
    pub fmin: f32,
    pub fmax: f32,
    /// CMNDF dip threshold; frames whose best dip stays above it are unvoiced.
    pub threshold: f32,
    /// Analysis window, centered on each STFT frame.
    pub window: usize,
    /// RMS below this is treated as silence.
    pub silence_rms: f32,
}

impl Default for F0Params {
    fn default() -> Self {
        Self {
            fmin: 60.0,
            fmax: 1200.0,
            threshold: 0.2,
            window: 2048,
            silence_rms: 1e-4,
        }
    }
}

/// Per-frame (lf0, voicing) aligned with the STFT framing of `cfg`.
/// lf0 is ln(f0) on voiced frames and 0 on unvoiced ones.
pub fn extract_f0(waveform: &Waveform, cfg: &StftConfig, params: &F0Params) -> Result<(Vec<f32>, Vec<u8>)> {
    cfg.validate()?;
    let sr = waveform.sample_rate as f32;
    if params.fmin >= params.fmax || params.fmax > sr / 2.0 || params.fmin <= 0.0 {
        return Err(Error::ConfigInvalid(format!(
            "f0 range [{}, {}] invalid for sr {}",
            params.fmin, params.fmax, sr
        )));
    }

    let samples = &waveform.samples;
    let n_frames = cfg.n_frames(samples.len());
    let win = params.window.min(samples.len().max(2)).max(64);
    let tau_min = ((sr / params.fmax).floor() as usize).max(2);
    let tau_max = ((sr / params.fmin).ceil() as usize).min(win / 2);
    if tau_min >= tau_max {
        return Err(Error::ConfigInvalid("f0 search range collapsed; widen window or range".into()));
    }
    let integ = win - tau_max;

    let fft_len = (win + tau_max + 1).next_power_of_two();
    let mut planner = FftPlanner::<f32>::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);

    let mut lf0 = vec![0.0f32; n_frames];
    let mut voicing = vec![0u8; n_frames];
    let mut frame = vec![0.0f32; win];
    let mut fa = vec![Complex::new(0.0, 0.0); fft_len];
    let mut fb = vec![Complex::new(0.0, 0.0); fft_len];
    let mut diff = vec![0.0f64; tau_max + 1];
    let mut cmndf = vec![0.0f64; tau_max + 1];

    for t in 0..n_frames {
        let center = t * cfg.hop_length + cfg.window_length / 2;
        let start = center.saturating_sub(win / 2).min(samples.len().saturating_sub(win));
        for (i, slot) in frame.iter_mut().enumerate() {
            *slot = samples.get(start + i).copied().unwrap_or(0.0);
        }

        let rms = (frame.iter().map(|s| (*s as f64) * (*s as f64)).sum::<f64>() / win as f64).sqrt();
        if rms < params.silence_rms as f64 {
            continue;
        }

        // d(tau) = p0 + p(tau) - 2 r(tau) over the first `integ` samples
        let mut prefix = vec![0.0f64; win + 1];
        for i in 0..win {
            prefix[i + 1] = prefix[i] + (frame[i] as f64) * (frame[i] as f64);
        }
        let p0 = prefix[integ];

        for slot in fa.iter_mut() {
            *slot = Complex::new(0.0, 0.0);
        }
        for slot in fb.iter_mut() {
            *slot = Complex::new(0.0, 0.0);
        }
        for i in 0..integ {
            fa[i] = Complex::new(frame[i], 0.0);
        }
        for i in 0..win {
            fb[i] = Complex::new(frame[i], 0.0);
        }
        fwd.process(&mut fa);
        fwd.process(&mut fb);
        for i in 0..fft_len {
            fb[i] = fa[i].conj() * fb[i];
        }
        inv.process(&mut fb);
        let scale = 1.0 / fft_len as f64;

        for tau in 0..=tau_max {
            let p_tau = prefix[tau + integ] - prefix[tau];
            let r = fb[tau].re as f64 * scale;
            diff[tau] = (p0 + p_tau - 2.0 * r).max(0.0);
        }

        cmndf[0] = 1.0;
        let mut running = 0.0f64;
        for tau in 1..=tau_max {
            running += diff[tau];
            cmndf[tau] = if running > 0.0 { diff[tau] * tau as f64 / running } else { 1.0 };
        }

        // first dip under the threshold, walked to its local minimum
        let mut best: Option<usize> = None;
        let mut tau = tau_min;
        while tau <= tau_max {
            if cmndf[tau] < params.threshold as f64 {
                while tau + 1 <= tau_max && cmndf[tau + 1] < cmndf[tau] {
                    tau += 1;
                }
                best = Some(tau);
                break;
            }
            tau += 1;
        }
        let Some(tau_star) = best else { continue };

        // parabolic refinement on the raw difference function
        let tau_hat = if tau_star > tau_min && tau_star < tau_max {
            let (d0, d1, d2) = (diff[tau_star - 1], diff[tau_star], diff[tau_star + 1]);
            let denom = d0 + d2 - 2.0 * d1;
            if denom.abs() > 1e-12 {
                tau_star as f64 + 0.5 * (d0 - d2) / denom
            } else {
                tau_star as f64
            }
        } else {
            tau_star as f64
        };

        let f0 = (sr as f64 / tau_hat).clamp(params.fmin as f64, params.fmax as f64);
        lf0[t] = f0.ln() as f32;
        voicing[t] = 1;
    }

    Ok((lf0, voicing))
}
