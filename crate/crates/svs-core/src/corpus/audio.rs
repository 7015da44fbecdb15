//! WAV ingestion and sample-rate conversion.

use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

/// Read a WAV file into a mono waveform; multi-channel content is averaged.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::UnreadableAudio {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnreadableAudio {
            path: path.to_path_buf(),
            reason: "zero channels".into(),
        });
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::UnreadableAudio { path: path.to_path_buf(), reason: e.to_string() })?,
        (hound::SampleFormat::Int, bits) if bits <= 32 => {
            let scale = 1.0 / (1i64 << (bits - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::UnreadableAudio { path: path.to_path_buf(), reason: e.to_string() })?
        }
        (fmt, bits) => {
            return Err(Error::UnreadableAudio {
                path: path.to_path_buf(),
                reason: format!("unsupported sample format {fmt:?} at {bits} bits"),
            })
        }
    };

    let samples: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    if samples.is_empty() {
        return Err(Error::UnreadableAudio { path: path.to_path_buf(), reason: "empty audio".into() });
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Write a mono 16-bit PCM WAV.
pub fn write_wav(path: &Path, waveform: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| Error::UnreadableAudio {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    for &s in &waveform.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(|e| Error::UnreadableAudio {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    }
    writer.finalize().map_err(|e| Error::UnreadableAudio {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

const SINC_HALF_TAPS: usize = 32;
const MAX_RATE_RATIO: f64 = 20.0;

/// Windowed-sinc resampler. Same-rate input is returned untouched.
pub fn resample(waveform: &Waveform, target_rate: u32) -> Result<Waveform> {
    let from = waveform.sample_rate;
    if target_rate == from {
        return Ok(waveform.clone());
    }
    if target_rate == 0 {
        return Err(Error::UnsupportedRate { from, to: target_rate });
    }
    let ratio = target_rate as f64 / from as f64;
    if !(1.0 / MAX_RATE_RATIO..=MAX_RATE_RATIO).contains(&ratio) {
        return Err(Error::UnsupportedRate { from, to: target_rate });
    }

    // anti-alias cutoff relative to the source Nyquist
    let cutoff = 0.92 * ratio.min(1.0);
    let n_in = waveform.samples.len();
    let n_out = ((n_in as f64) * ratio).round().max(1.0) as usize;
    let mut out = Vec::with_capacity(n_out);

    for n in 0..n_out {
        let t = n as f64 / ratio;
        let center = t.floor() as isize;
        let mut acc = 0.0f64;
        let mut norm = 0.0f64;
        for k in (center - SINC_HALF_TAPS as isize + 1)..=(center + SINC_HALF_TAPS as isize) {
            let d = t - k as f64;
            let w = windowed_sinc(d, cutoff);
            norm += w;
            if (0..n_in as isize).contains(&k) {
                acc += waveform.samples[k as usize] as f64 * w;
            }
        }
        let v = if norm.abs() > 1e-12 { acc / norm } else { 0.0 };
        out.push(v.clamp(-1.0, 1.0) as f32);
    }
    Waveform::new(out, target_rate)
}

fn windowed_sinc(d: f64, cutoff: f64) -> f64 {
    let x = std::f64::consts::PI * d;
    let sinc = if d.abs() < 1e-12 { cutoff } else { (cutoff * x).sin() / x };
    // Blackman window over [-half_taps, half_taps]
    let u = d / SINC_HALF_TAPS as f64;
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let w = 0.42 + 0.5 * (std::f64::consts::PI * u).cos() + 0.08 * (2.0 * std::f64::consts::PI * u).cos();
    sinc * w
}

/// Load audio and convert it to the canonical rate; peak stays within 1.0.
pub fn ingest_audio(path: &Path, target_rate: u32) -> Result<Waveform> {
    let raw = read_wav(path)?;
    resample(&raw, target_rate)
}
