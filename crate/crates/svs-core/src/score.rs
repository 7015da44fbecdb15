//! Musical-score math: MIDI pitch to frequency, log-F0, note-duration framing
//! and the uniform quantizers shared by the pitch and energy embedding tables.

use serde::{Deserialize, Serialize};

use crate::corpus::{Utterance, REST_PITCH_ID};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::lexicon::PhonemeVocab;

/// MIDI pitch id -> frequency in Hz, equal temperament with A4 = 440 Hz.
pub fn pitch_id_to_frequency(pitch_id: u8) -> Result<f64> {
    if pitch_id > 127 {
        return Err(Error::PitchOutOfRange(pitch_id as i64));
    }
    Ok(440.0 * 2f64.powf((pitch_id as f64 - 69.0) / 12.0))
}

/// Natural-log F0 of a non-rest MIDI pitch id.
pub fn lf0_of_pitch(pitch_id: u8) -> Result<f64> {
    if pitch_id == REST_PITCH_ID {
        return Err(Error::RestPitch);
    }
    Ok(pitch_id_to_frequency(pitch_id)?.ln())
}

/// Frame count of a note duration: floor((dur*sr - wl)/hl) + 1, clamped to 1
/// so sub-window notes still occupy a frame.
pub fn frames_for_duration(dur_sec: f64, sample_rate: u32, window_length: usize, hop_length: usize) -> usize {
    let samples = dur_sec * sample_rate as f64;
    if samples < window_length as f64 {
        return 1;
    }
    let frames = ((samples - window_length as f64) / hop_length as f64).floor() as usize + 1;
    frames.max(1)
}

/// Uniform scalar quantizer over [lo, hi]; out-of-range values clamp to the
/// edge bins so the embedding lookup never sees an invalid id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub n_bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl QuantizerSpec {
    pub fn new(n_bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::ConfigInvalid(format!("quantizer needs >= 2 bins, got {n_bins}")));
        }
        if !(lo < hi) {
            return Err(Error::ConfigInvalid(format!("quantizer range invalid: lo={lo} hi={hi}")));
        }
        Ok(Self { n_bins, lo, hi })
    }

    /// 256 bins over the log-F0 of MIDI 30..=100, the singable range.
    pub fn pitch_default() -> Self {
        let lo = lf0_of_pitch(30).expect("midi 30 is not a rest");
        let hi = lf0_of_pitch(100).expect("midi 100 is not a rest");
        Self { n_bins: 256, lo, hi }
    }

    pub fn quantize(&self, value: f64) -> usize {
        let span = self.hi - self.lo;
        let bin = ((value - self.lo) / span * self.n_bins as f64).floor();
        (bin.max(0.0) as usize).min(self.n_bins - 1)
    }

    /// Bin center, the inverse used for round-trip checks.
    pub fn dequantize(&self, bin: usize) -> f64 {
        let width = (self.hi - self.lo) / self.n_bins as f64;
        self.lo + (bin as f64 + 0.5) * width
    }
}

/// Per-phoneme model inputs assembled from an utterance's annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFeatures {
    pub phoneme_ids: Vec<u32>,
    pub note_pitch_ids: Vec<u8>,
    pub note_frame_counts: Vec<u32>,
    pub slur_ids: Vec<u8>,
    /// log-F0 of the note per phoneme position, 0.0 at rests.
    pub note_lf0: Vec<f64>,
}

impl ScoreFeatures {
    pub fn len(&self) -> usize {
        self.phoneme_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phoneme_ids.is_empty()
    }
}

/// Map an utterance onto parallel id sequences for the model.
pub fn build_score_features(utt: &Utterance, vocab: &PhonemeVocab, stft: &StftConfig) -> Result<ScoreFeatures> {
    let n = utt.phonemes.len();
    let mut phoneme_ids = Vec::with_capacity(n);
    let mut note_frame_counts = Vec::with_capacity(n);
    let mut note_lf0 = Vec::with_capacity(n);

    for (i, symbol) in utt.phonemes.iter().enumerate() {
        let id = vocab.id_of(symbol).ok_or_else(|| Error::UnknownPhoneme {
            id: utt.id.clone(),
            symbol: symbol.clone(),
        })?;
        phoneme_ids.push(id);
        note_frame_counts.push(frames_for_duration(
            utt.note_durations_sec[i],
            stft.sample_rate,
            stft.window_length,
            stft.hop_length,
        ) as u32);
        let pitch = utt.note_pitches[i];
        note_lf0.push(if pitch == REST_PITCH_ID { 0.0 } else { lf0_of_pitch(pitch)? });
    }

    Ok(ScoreFeatures {
        phoneme_ids,
        note_pitch_ids: utt.note_pitches.clone(),
        note_frame_counts,
        slur_ids: utt.slur_flags.clone(),
        note_lf0,
    })
}

/// Snap annotated phoneme boundaries onto the frame grid so the counts sum
/// exactly to `total_frames`. Every phoneme keeps at least one frame; the
/// deficit is taken from the longest neighbor.
pub fn phoneme_frame_counts(durations_sec: &[f64], stft: &StftConfig, total_frames: usize) -> Vec<u32> {
    if durations_sec.is_empty() {
        return Vec::new();
    }
    let hop_sec = stft.hop_length as f64 / stft.sample_rate as f64;
    let mut counts = vec![0u32; durations_sec.len()];
    let mut cumulative = 0.0f64;
    let mut prev_boundary = 0usize;
    for (i, d) in durations_sec.iter().enumerate() {
        cumulative += d;
        let boundary = if i + 1 == durations_sec.len() {
            total_frames
        } else {
            ((cumulative / hop_sec).round() as usize).clamp(prev_boundary, total_frames)
        };
        counts[i] = (boundary - prev_boundary) as u32;
        prev_boundary = boundary;
    }
    // repair zero-frame phonemes when the budget allows
    if total_frames >= counts.len() {
        for i in 0..counts.len() {
            while counts[i] == 0 {
                let donor = counts
                    .iter()
                    .enumerate()
                    .max_by_key(|(_, c)| **c)
                    .map(|(j, _)| j)
                    .expect("non-empty");
                if counts[donor] <= 1 {
                    break;
                }
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
    }
    counts
}
