//! Deterministic synthetic mini-corpus in the Opencpop layout: annotated
//! harmonic "singing" rendered from randomly drawn scores. Gives every
//! pipeline stage something real to chew on when no corpus is mounted.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::corpus::{serialize_transcription, write_wav, Utterance, Waveform, REST_PITCH_ID};
use crate::error::{Error, Result};
use crate::score::pitch_id_to_frequency;

const FIXTURE_WORDS: &[(&str, &str)] = &[
    ("我", "wo"),
    ("你", "ni"),
    ("天", "tian"),
    ("上", "shang"),
    ("山", "shan"),
    ("海", "hai"),
    ("风", "feng"),
    ("花", "hua"),
    ("月", "yue"),
    ("星", "xing"),
    ("光", "guang"),
    ("爱", "ai"),
    ("云", "yun"),
    ("水", "shui"),
    ("梦", "meng"),
    ("歌", "ge"),
    ("唱", "chang"),
    ("飞", "fei"),
    ("鸟", "niao"),
    ("春", "chun"),
];

const SAMPLE_RATE: u32 = 24_000;
const N_HARMONICS: usize = 8;

struct Event {
    phoneme: String,
    pitch: u8,
    note_dur: f64,
    phoneme_dur: f64,
    slur: u8,
    /// None for rests and unvoiced initials.
    level: Option<f64>,
}

/// Generate `count` annotated utterances plus rendered waveforms under
/// `dir/transcriptions.txt` and `dir/wavs/`.
pub fn generate_fixture_corpus(dir: &Path, count: usize, seed: u64) -> Result<Vec<Utterance>> {
    let wav_dir = dir.join("wavs");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut utterances = Vec::with_capacity(count);
    let mut lines = String::new();

    for index in 0..count {
        let id = format!("fix{:04}", index + 1);
        let (utt, wave) = generate_utterance(&id, &mut rng);
        let path = wav_dir.join(format!("{id}.wav"));
        write_wav(&path, &wave)?;
        lines.push_str(&serialize_transcription(&utt));
        lines.push('\n');
        utterances.push(utt);
    }

    let transcription_path = dir.join("transcriptions.txt");
    std::fs::write(&transcription_path, lines).map_err(|e| Error::io(&transcription_path, e))?;
    Ok(utterances)
}

fn generate_utterance(id: &str, rng: &mut ChaCha20Rng) -> (Utterance, Waveform) {
    let n_words = rng.random_range(3..=6);
    let mut pitch: i32 = rng.random_range(60..=72);
    let mut events: Vec<Event> = Vec::new();
    let mut text: Vec<String> = Vec::new();

    events.push(rest_event("SP", rng.random_range(0.12..0.2)));

    for w in 0..n_words {
        let (ch, pinyin) = FIXTURE_WORDS[rng.random_range(0..FIXTURE_WORDS.len())];
        text.push(ch.to_string());
        let phonemes = crate::lexicon::split_pinyin(pinyin);
        pitch = (pitch + rng.random_range(-4..=4)).clamp(57, 76);
        let note_dur = round2(rng.random_range(0.28..0.55));
        let level = rng.random_range(0.3..0.75);

        if phonemes.len() == 2 {
            let initial_dur = round2(rng.random_range(0.05..0.09));
            events.push(Event {
                phoneme: phonemes[0].clone(),
                pitch: pitch as u8,
                note_dur,
                phoneme_dur: initial_dur,
                slur: 0,
                level: None,
            });
            events.push(Event {
                phoneme: phonemes[1].clone(),
                pitch: pitch as u8,
                note_dur,
                phoneme_dur: round2(note_dur - initial_dur),
                slur: 0,
                level: Some(level),
            });
        } else {
            events.push(Event {
                phoneme: phonemes[0].clone(),
                pitch: pitch as u8,
                note_dur,
                phoneme_dur: note_dur,
                slur: 0,
                level: Some(level),
            });
        }

        // melisma: the vowel continues on a neighboring note
        if rng.random_bool(0.2) {
            let vowel = events.last().expect("word emitted").phoneme.clone();
            let next_pitch = (pitch + if rng.random_bool(0.5) { 2 } else { -2 }).clamp(57, 76);
            let slur_dur = round2(rng.random_range(0.22..0.4));
            events.push(Event {
                phoneme: vowel,
                pitch: next_pitch as u8,
                note_dur: slur_dur,
                phoneme_dur: slur_dur,
                slur: 1,
                level: Some(level * 0.9),
            });
            pitch = next_pitch;
        }

        if w + 1 < n_words {
            if rng.random_bool(0.25) {
                events.push(rest_event("SP", rng.random_range(0.1..0.22)));
            } else if rng.random_bool(0.1) {
                events.push(rest_event("AP", rng.random_range(0.1..0.18)));
            }
        }
    }

    events.push(rest_event("SP", rng.random_range(0.12..0.2)));

    let utt = Utterance {
        id: id.to_string(),
        text,
        phonemes: events.iter().map(|e| e.phoneme.clone()).collect(),
        note_pitches: events.iter().map(|e| e.pitch).collect(),
        note_durations_sec: events.iter().map(|e| e.note_dur).collect(),
        phoneme_durations_sec: events.iter().map(|e| e.phoneme_dur).collect(),
        slur_flags: events.iter().map(|e| e.slur).collect(),
        audio_path: String::new(),
    };
    debug_assert!(utt.validate().is_ok());

    let wave = render(&events, rng);
    (utt, wave)
}

fn rest_event(marker: &str, dur: f64) -> Event {
    Event {
        phoneme: marker.to_string(),
        pitch: REST_PITCH_ID,
        note_dur: round2(dur),
        phoneme_dur: round2(dur),
        slur: 0,
        level: None,
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Phase-continuous harmonic rendering with per-note levels and short
/// attack/release ramps; initials are noise bursts, AP is breath noise.
fn render(events: &[Event], rng: &mut ChaCha20Rng) -> Waveform {
    let total_sec: f64 = events.iter().map(|e| e.phoneme_dur).sum();
    let n_samples = (total_sec * SAMPLE_RATE as f64).round() as usize;
    let mut samples = vec![0.0f32; n_samples];
    let mut phase = 0.0f64;

    let mut cumulative = 0.0f64;
    for event in events {
        let start = (cumulative * SAMPLE_RATE as f64).round() as usize;
        cumulative += event.phoneme_dur;
        let end = ((cumulative * SAMPLE_RATE as f64).round() as usize).min(n_samples);
        if end <= start {
            continue;
        }
        let span = end - start;

        match (&event.level, event.phoneme.as_str()) {
            (None, "AP") => {
                for slot in samples[start..end].iter_mut() {
                    *slot = (rng.random::<f32>() - 0.5) * 0.05;
                }
            }
            (None, "SP") => {}
            (None, _) => {
                // unvoiced initial: filtered-ish noise burst
                for (i, slot) in samples[start..end].iter_mut().enumerate() {
                    let ramp = 1.0 - i as f32 / span as f32;
                    *slot = (rng.random::<f32>() - 0.5) * 0.12 * ramp;
                }
            }
            (Some(level), _) => {
                let f0 = pitch_id_to_frequency(event.pitch).expect("fixture pitch valid");
                let attack = (0.015 * SAMPLE_RATE as f64) as usize;
                let release = (0.03 * SAMPLE_RATE as f64) as usize;
                for i in 0..span {
                    phase += TAU * f0 / SAMPLE_RATE as f64;
                    let mut s = 0.0f64;
                    for h in 1..=N_HARMONICS {
                        let hf = f0 * h as f64;
                        if hf >= SAMPLE_RATE as f64 / 2.0 {
                            break;
                        }
                        s += (phase * h as f64).sin() * 0.55 / (h as f64).powf(1.3);
                    }
                    let env = (i.min(attack) as f64 / attack as f64)
                        .min((span - i).min(release) as f64 / release as f64)
                        .min(1.0);
                    samples[start + i] = (s * level * env) as f32;
                }
            }
        }
    }

    let peak = samples.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    if peak > 0.99 {
        let scale = 0.99 / peak;
        for s in samples.iter_mut() {
            *s *= scale;
        }
    }
    Waveform::new(samples, SAMPLE_RATE).expect("fixture renders non-empty audio")
}
