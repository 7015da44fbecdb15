//! Statistical and property-based oracles for the analysis pipeline.

use proptest::prelude::*;

use svs_core::corpus::Waveform;
use svs_core::dsp::{frame_energy, mel_from_stft, mel_filterbank, stft, MelParams, StftConfig};
use svs_core::score::{frames_for_duration, QuantizerSpec};

#[test]
fn white_noise_mel_bands_stay_within_20db() {
    // power per band is bandwidth-proportional; over many frames the mean
    // band energies must stay within a 20 dB spread
    let cfg = StftConfig::default();
    let params = MelParams::default();
    let mut state = 0x12345678u64;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 32) as u32 as f32 / u32::MAX as f32) * 2.0 - 1.0
    };
    let n = 1024 + 256 * 200;
    let samples: Vec<f32> = (0..n).map(|_| next() * 0.7).collect();
    let wave = Waveform::new(samples, 24_000).unwrap();
    let spec = stft(&wave, &cfg).unwrap();
    let bank = mel_filterbank(&cfg, &params);
    let mel = mel_from_stft(&spec, &bank, params.n_mels);

    // mean power per band over all frames (mel values are ln of band power)
    let mut mean_power = vec![0.0f64; params.n_mels];
    for t in 0..spec.n_frames {
        for m in 0..params.n_mels {
            mean_power[m] += (mel[t * params.n_mels + m] as f64).exp();
        }
    }
    let db: Vec<f64> = mean_power
        .iter()
        .map(|p| 10.0 * (p / spec.n_frames as f64).log10())
        .collect();
    let lo = db.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(hi - lo < 20.0, "band spread {:.2} dB (lo {lo:.2}, hi {hi:.2})", hi - lo);
}

proptest! {
    #[test]
    fn frame_energy_matches_brute_force(seed in 0u64..200) {
        let cfg = StftConfig::default();
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(7);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 32) as u32 as f32 / u32::MAX as f32) * 2.0 - 1.0
        };
        let samples: Vec<f32> = (0..4096).map(|_| next() * 0.9).collect();
        let wave = Waveform::new(samples, 24_000).unwrap();
        let spec = stft(&wave, &cfg).unwrap();
        let fast = frame_energy(&spec);
        for t in 0..spec.n_frames {
            let brute: f64 = spec
                .frame(t)
                .iter()
                .map(|c| (c.re as f64).powi(2) + (c.im as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            prop_assert!((fast[t] as f64 - brute).abs() <= 1e-6 * brute.max(1e-12));
        }
    }

    #[test]
    fn quantizer_round_trip_stays_within_one_bin(value in 0.0f64..1.0, lo in -5.0f64..0.0, span in 0.5f64..10.0) {
        let spec = QuantizerSpec::new(256, lo, lo + span).unwrap();
        let v = lo + value * span;
        let bin = spec.quantize(v);
        let back = spec.dequantize(bin);
        let width = span / 256.0;
        prop_assert!((back - v).abs() <= width, "v {v} -> bin {bin} -> {back}");
    }

    #[test]
    fn quantizer_is_monotone(a in -4.0f64..4.0, b in -4.0f64..4.0) {
        let spec = QuantizerSpec::new(64, -4.0, 4.0).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(spec.quantize(lo) <= spec.quantize(hi));
    }

    #[test]
    fn frame_count_is_monotone_in_duration(base in 0.05f64..2.0, extra in 0.0f64..1.0) {
        let shorter = frames_for_duration(base, 24_000, 1024, 256);
        let longer = frames_for_duration(base + extra, 24_000, 1024, 256);
        prop_assert!(longer >= shorter);
    }
}
