//! Objective metrics: F0, duration and energy mean absolute errors between a
//! synthesized utterance and its reference.

use serde::{Deserialize, Serialize};

use svs_core::config::RunConfig;
use svs_core::corpus::Waveform;
use svs_core::dsp::{self, F0Params};
use svs_core::Error;
use svs_model::synth::SynthesisResult;

/// Per-utterance objective errors. `f0_mae_hz` is absent when reference and
/// synthesis share no voiced frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceMetrics {
    pub id: String,
    pub f0_mae_hz: Option<f64>,
    pub dur_mae_frames: f64,
    pub energy_mae: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: String,
    pub n_utterances: usize,
    /// Aggregates are means of the per-utterance values (F0 over those where
    /// it exists).
    pub f0_mae_hz: Option<f64>,
    pub dur_mae_frames: f64,
    pub energy_mae: f64,
    pub n_missing_f0: usize,
    pub per_utterance: Vec<UtteranceMetrics>,
}

impl MetricReport {
    pub fn aggregate(variant: &str, per_utterance: Vec<UtteranceMetrics>) -> Self {
        let n = per_utterance.len();
        let f0: Vec<f64> = per_utterance.iter().filter_map(|m| m.f0_mae_hz).collect();
        let n_missing_f0 = n - f0.len();
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        Self {
            variant: variant.to_string(),
            n_utterances: n,
            f0_mae_hz: if f0.is_empty() { None } else { Some(mean(&f0)) },
            dur_mae_frames: mean(&per_utterance.iter().map(|m| m.dur_mae_frames).collect::<Vec<_>>()),
            energy_mae: mean(&per_utterance.iter().map(|m| m.energy_mae).collect::<Vec<_>>()),
            n_missing_f0,
            per_utterance,
        }
    }

    pub fn flat_table(&self) -> String {
        let mut out = String::from("id\tf0_mae_hz\tdur_mae_frames\tenergy_mae\n");
        for m in &self.per_utterance {
            out.push_str(&format!(
                "{}\t{}\t{:.4}\t{:.4}\n",
                m.id,
                m.f0_mae_hz.map_or("absent".to_string(), |v| format!("{v:.4}")),
                m.dur_mae_frames,
                m.energy_mae
            ));
        }
        out.push_str(&format!(
            "AGGREGATE[{}]\t{}\t{:.4}\t{:.4}\n",
            self.variant,
            self.f0_mae_hz.map_or("absent".to_string(), |v| format!("{v:.4}")),
            self.dur_mae_frames,
            self.energy_mae
        ));
        out
    }
}

fn f0_params(cfg: &RunConfig) -> F0Params {
    F0Params {
        fmin: cfg.f0.fmin,
        fmax: cfg.f0.fmax,
        threshold: cfg.f0.threshold,
        ..F0Params::default()
    }
}

/// F0 MAE in Hz over mutually voiced frames, duration MAE in frames per
/// phoneme, energy MAE in raw L2 units over the shorter frame sequence.
pub fn compute_metrics(
    utterance_id: &str,
    reference: &Waveform,
    gt_phoneme_frames: &[u32],
    synthesis: &SynthesisResult,
    cfg: &RunConfig,
) -> svs_core::Result<UtteranceMetrics> {
    if reference.sample_rate != cfg.stft.sample_rate
        || synthesis.waveform.sample_rate != cfg.stft.sample_rate
    {
        return Err(Error::ConfigInvalid(format!(
            "{utterance_id}: metric inputs must share the canonical sample rate"
        )));
    }
    if gt_phoneme_frames.len() != synthesis.pred_phoneme_frames.len() {
        return Err(Error::ShapeMismatch(format!(
            "{utterance_id}: {} annotated phonemes vs {} predicted",
            gt_phoneme_frames.len(),
            synthesis.pred_phoneme_frames.len()
        )));
    }

    let params = f0_params(cfg);
    let (ref_lf0, ref_voicing) = dsp::extract_f0(reference, &cfg.stft, &params)?;
    let (syn_lf0, syn_voicing) = dsp::extract_f0(&synthesis.waveform, &cfg.stft, &params)?;

    let frames = ref_lf0.len().min(syn_lf0.len());
    let mut f0_err = 0.0f64;
    let mut f0_count = 0usize;
    for t in 0..frames {
        if ref_voicing[t] == 1 && syn_voicing[t] == 1 {
            f0_err += ((ref_lf0[t].exp() - syn_lf0[t].exp()) as f64).abs();
            f0_count += 1;
        }
    }
    let f0_mae_hz = (f0_count > 0).then(|| f0_err / f0_count as f64);

    let dur_mae_frames = gt_phoneme_frames
        .iter()
        .zip(&synthesis.pred_phoneme_frames)
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .sum::<f64>()
        / gt_phoneme_frames.len().max(1) as f64;

    let ref_energy = dsp::frame_energy(&dsp::stft(reference, &cfg.stft)?);
    let syn_energy = dsp::frame_energy(&dsp::stft(&synthesis.waveform, &cfg.stft)?);
    let e_frames = ref_energy.len().min(syn_energy.len());
    let energy_mae = if e_frames == 0 {
        0.0
    } else {
        ref_energy
            .iter()
            .zip(&syn_energy)
            .take(e_frames)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum::<f64>()
            / e_frames as f64
    };

    Ok(UtteranceMetrics {
        id: utterance_id.to_string(),
        f0_mae_hz,
        dur_mae_frames,
        energy_mae,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f32, seconds: f32) -> Waveform {
        let sr = 24_000u32;
        let n = (seconds * sr as f32) as usize;
        Waveform::new(
            (0..n)
                .map(|i| (2.0 * std::f32::consts::PI * freq * i as f32 / sr as f32).sin() * 0.6)
                .collect(),
            sr,
        )
        .unwrap()
    }

    fn identity_synthesis(w: &Waveform, frames: &[u32]) -> SynthesisResult {
        SynthesisResult {
            waveform: w.clone(),
            pred_phoneme_frames: frames.to_vec(),
            lf0_hat: vec![],
            log_energy: None,
        }
    }

    #[test]
    fn identical_inputs_score_zero() {
        let cfg = RunConfig::default();
        let w = sine(330.0, 0.8);
        let frames = vec![20u32, 30, 10];
        let m = compute_metrics("x", &w, &frames, &identity_synthesis(&w, &frames), &cfg).unwrap();
        assert_eq!(m.f0_mae_hz, Some(0.0));
        assert_eq!(m.dur_mae_frames, 0.0);
        assert_eq!(m.energy_mae, 0.0);
    }

    #[test]
    fn f0_mae_is_gain_invariant() {
        let cfg = RunConfig::default();
        let w = sine(330.0, 0.8);
        let half = Waveform::new(w.samples.iter().map(|s| s * 0.5).collect(), 24_000).unwrap();
        let frames = vec![60u32];
        let m = compute_metrics("x", &w, &frames, &identity_synthesis(&half, &frames), &cfg).unwrap();
        assert!(m.f0_mae_hz.unwrap() < 0.5, "{:?}", m.f0_mae_hz);
        // while the energies clearly differ
        assert!(m.energy_mae > 1.0);
    }

    #[test]
    fn semitone_shift_matches_equal_temperament_offset() {
        let cfg = RunConfig::default();
        let base = 440.0f32;
        let shifted = base * 2f32.powf(1.0 / 12.0);
        let frames = vec![60u32];
        let m = compute_metrics(
            "x",
            &sine(base, 0.8),
            &frames,
            &identity_synthesis(&sine(shifted, 0.8), &frames),
            &cfg,
        )
        .unwrap();
        let expected = (shifted - base) as f64;
        let got = m.f0_mae_hz.unwrap();
        assert!((got - expected).abs() < 1.5, "got {got}, expected ~{expected}");
    }

    #[test]
    fn unvoiced_overlap_flags_f0_absent() {
        let cfg = RunConfig::default();
        let silence = Waveform::new(vec![0.0; 24_000], 24_000).unwrap();
        let frames = vec![30u32];
        let m = compute_metrics("x", &silence, &frames, &identity_synthesis(&silence, &frames), &cfg)
            .unwrap();
        assert_eq!(m.f0_mae_hz, None);
    }

    #[test]
    fn constant_energy_offset_shows_up_directly() {
        let cfg = RunConfig::default();
        let w = sine(330.0, 0.5);
        let loud = Waveform::new(w.samples.iter().map(|s| s * 2.0).collect(), 24_000).unwrap();
        let frames = vec![40u32];
        let m = compute_metrics("x", &w, &frames, &identity_synthesis(&loud, &frames), &cfg).unwrap();
        // energy is linear in gain so the MAE equals the mean reference energy
        let ref_energy = dsp::frame_energy(&dsp::stft(&w, &cfg.stft).unwrap());
        let mean: f64 = ref_energy.iter().map(|e| *e as f64).sum::<f64>() / ref_energy.len() as f64;
        assert!((m.energy_mae - mean).abs() / mean < 0.02, "{} vs {mean}", m.energy_mae);
    }

    #[test]
    fn duration_mae_counts_frame_differences() {
        let cfg = RunConfig::default();
        let w = sine(330.0, 0.5);
        let syn = SynthesisResult {
            waveform: w.clone(),
            pred_phoneme_frames: vec![12, 20],
            lf0_hat: vec![],
            log_energy: None,
        };
        let m = compute_metrics("x", &w, &[10, 26], &syn, &cfg).unwrap();
        assert_eq!(m.dur_mae_frames, 4.0);
    }

    #[test]
    fn aggregate_is_the_mean_of_per_utterance() {
        let report = MetricReport::aggregate(
            "proposed",
            vec![
                UtteranceMetrics { id: "a".into(), f0_mae_hz: Some(10.0), dur_mae_frames: 2.0, energy_mae: 4.0 },
                UtteranceMetrics { id: "b".into(), f0_mae_hz: None, dur_mae_frames: 4.0, energy_mae: 8.0 },
                UtteranceMetrics { id: "c".into(), f0_mae_hz: Some(20.0), dur_mae_frames: 6.0, energy_mae: 0.0 },
            ],
        );
        assert_eq!(report.f0_mae_hz, Some(15.0));
        assert_eq!(report.dur_mae_frames, 4.0);
        assert_eq!(report.energy_mae, 4.0);
        assert_eq!(report.n_missing_f0, 1);
    }
}
