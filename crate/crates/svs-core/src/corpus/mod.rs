//! Parsing and validation of annotated singing corpora in the Opencpop
//! transcription layout.
//!
//! One utterance per line, seven pipe-separated fields:
//!
//! ```text
//! id|text|phonemes|note pitches|note durations|phoneme durations|slur flags
//! ```
//!
//! The last five fields are space-separated parallel sequences, one entry per
//! phoneme. Note pitches are either MIDI ids, scientific names ("C4",
//! "G#4/Ab4" for enharmonic pairs), or "rest" for SP/AP positions. Durations
//! are seconds; slur flags mark phonemes that continue the previous note.

mod audio;

pub use audio::{ingest_audio, read_wav, resample, write_wav};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{is_rest, PhonemeDict};

/// MIDI id 0 never occurs in sung material; it marks SP/AP rests.
pub const REST_PITCH_ID: u8 = 0;

pub const TRANSCRIPTION_FIELDS: usize = 7;

/// One annotated singing segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    /// Lyric characters, one per word.
    pub text: Vec<String>,
    pub phonemes: Vec<String>,
    pub note_pitches: Vec<u8>,
    pub note_durations_sec: Vec<f64>,
    pub phoneme_durations_sec: Vec<f64>,
    pub slur_flags: Vec<u8>,
    /// Resolved by the manifest step; empty until then.
    pub audio_path: String,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.phonemes.len();
        let lens = [
            self.note_pitches.len(),
            self.note_durations_sec.len(),
            self.phoneme_durations_sec.len(),
            self.slur_flags.len(),
        ];
        if lens.iter().any(|l| *l != n) {
            return Err(Error::LengthMismatch {
                id: self.id.clone(),
                detail: format!(
                    "phonemes={n} pitches={} note_durs={} ph_durs={} slurs={}",
                    lens[0], lens[1], lens[2], lens[3]
                ),
            });
        }
        for (i, p) in self.phonemes.iter().enumerate() {
            let pitch = self.note_pitches[i];
            if is_rest(p) && pitch != REST_PITCH_ID {
                return Err(Error::LengthMismatch {
                    id: self.id.clone(),
                    detail: format!("rest marker {p} at {i} carries pitch {pitch}"),
                });
            }
            if self.note_durations_sec[i] <= 0.0 || self.phoneme_durations_sec[i] <= 0.0 {
                return Err(Error::LengthMismatch {
                    id: self.id.clone(),
                    detail: format!("non-positive duration at {i}"),
                });
            }
            if self.slur_flags[i] > 1 {
                return Err(Error::LengthMismatch {
                    id: self.id.clone(),
                    detail: format!("slur flag {} at {i}", self.slur_flags[i]),
                });
            }
        }
        Ok(())
    }

    /// Positions grouped by shared note: a syllable's initial and final carry
    /// the same note, so its duration counts once. Rests and slurred
    /// continuations are their own notes.
    pub fn note_groups(&self) -> Vec<(usize, usize)> {
        let mut groups: Vec<(usize, usize)> = Vec::new();
        for i in 0..self.phonemes.len() {
            let joins_previous = i > 0
                && crate::lexicon::is_initial(&self.phonemes[i - 1])
                && !is_rest(&self.phonemes[i])
                && self.slur_flags[i] == 0
                && self.note_pitches[i] == self.note_pitches[i - 1];
            if joins_previous {
                groups.last_mut().expect("previous group exists").1 += 1;
            } else {
                groups.push((i, 1));
            }
        }
        groups
    }

    /// Sung duration of the utterance per the annotation, counting each note
    /// once.
    pub fn total_note_duration_sec(&self) -> f64 {
        self.note_groups()
            .iter()
            .map(|(start, _)| self.note_durations_sec[*start])
            .sum()
    }
}

/// Parse a scientific note name ("C4", "G#4/Ab4"), a bare MIDI id, or "rest".
pub fn parse_note_pitch(token: &str) -> Option<u8> {
    if token == "rest" {
        return Some(REST_PITCH_ID);
    }
    if let Ok(id) = token.parse::<u8>() {
        return (id <= 127).then_some(id);
    }
    // enharmonic pairs list both spellings; either one resolves the pitch
    let name = token.split('/').next()?;
    let bytes = name.as_bytes();
    if bytes.len() < 2 {
        return None;
    }
    let step = match bytes[0] {
        b'C' => 0i32,
        b'D' => 2,
        b'E' => 4,
        b'F' => 5,
        b'G' => 7,
        b'A' => 9,
        b'B' => 11,
        _ => return None,
    };
    let (accidental, octave_str) = match bytes[1] {
        b'#' => (1, &name[2..]),
        b'b' => (-1, &name[2..]),
        _ => (0, &name[1..]),
    };
    let octave: i32 = octave_str.parse().ok()?;
    let midi = (octave + 1) * 12 + step + accidental;
    (0..=127).contains(&midi).then_some(midi as u8)
}

/// Canonical spelling for serialization; black keys keep the sharp/flat pair.
pub fn format_note_pitch(pitch: u8) -> String {
    if pitch == REST_PITCH_ID {
        return "rest".to_string();
    }
    const NAMES: [&str; 12] = [
        "C", "C#/Db", "D", "D#/Eb", "E", "F", "F#/Gb", "G", "G#/Ab", "A", "A#/Bb", "B",
    ];
    let octave = pitch as i32 / 12 - 1;
    let name = NAMES[(pitch % 12) as usize];
    if let Some((sharp, flat)) = name.split_once('/') {
        format!("{sharp}{octave}/{flat}{octave}")
    } else {
        format!("{name}{octave}")
    }
}

fn format_duration(d: f64) -> String {
    let s = format!("{d:.6}");
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    if trimmed.is_empty() { "0".to_string() } else { trimmed.to_string() }
}

/// Parse one transcription line into an [`Utterance`].
pub fn parse_transcription(line: &str, dict: &PhonemeDict) -> Result<Utterance> {
    let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('|').collect();
    if fields.len() != TRANSCRIPTION_FIELDS {
        return Err(Error::MalformedLine {
            expected: TRANSCRIPTION_FIELDS,
            got: fields.len(),
            line: line.to_string(),
        });
    }
    let id = fields[0].to_string();
    let text: Vec<String> = fields[1].chars().map(|c| c.to_string()).collect();
    let phonemes: Vec<String> = fields[2].split_whitespace().map(str::to_string).collect();

    let mut note_pitches = Vec::new();
    for token in fields[3].split_whitespace() {
        let pitch = parse_note_pitch(token).ok_or_else(|| Error::Parse {
            path: id.clone().into(),
            reason: format!("bad note pitch token {token:?}"),
        })?;
        note_pitches.push(pitch);
    }

    let parse_durations = |field: &str, what: &str| -> Result<Vec<f64>> {
        field
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    path: id.clone().into(),
                    reason: format!("bad {what} token {t:?}"),
                })
            })
            .collect()
    };
    let note_durations_sec = parse_durations(fields[4], "note duration")?;
    let phoneme_durations_sec = parse_durations(fields[5], "phoneme duration")?;

    let mut slur_flags = Vec::new();
    for t in fields[6].split_whitespace() {
        match t {
            "0" => slur_flags.push(0u8),
            "1" => slur_flags.push(1u8),
            other => {
                return Err(Error::Parse {
                    path: id.clone().into(),
                    reason: format!("bad slur flag {other:?}"),
                })
            }
        }
    }

    for symbol in &phonemes {
        if !dict.is_known_phoneme(symbol) {
            return Err(Error::UnknownPhoneme { id, symbol: symbol.clone() });
        }
    }

    let utt = Utterance {
        id,
        text,
        phonemes,
        note_pitches,
        note_durations_sec,
        phoneme_durations_sec,
        slur_flags,
        audio_path: String::new(),
    };
    utt.validate()?;
    Ok(utt)
}

/// Inverse of [`parse_transcription`]; parse(serialize(u)) == u.
pub fn serialize_transcription(utt: &Utterance) -> String {
    let join =
        |items: Vec<String>| -> String { items.join(" ") };
    format!(
        "{}|{}|{}|{}|{}|{}|{}",
        utt.id,
        utt.text.concat(),
        utt.phonemes.join(" "),
        join(utt.note_pitches.iter().map(|p| format_note_pitch(*p)).collect()),
        join(utt.note_durations_sec.iter().map(|d| format_duration(*d)).collect()),
        join(utt.phoneme_durations_sec.iter().map(|d| format_duration(*d)).collect()),
        join(utt.slur_flags.iter().map(|s| s.to_string()).collect()),
    )
}

/// Mono waveform in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() || sample_rate == 0 {
            return Err(Error::ConfigInvalid("waveform must be non-empty with a positive rate".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Deterministic, disjoint, exhaustive train/eval split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub eval: Vec<String>,
    pub seed: u64,
}

pub fn split_dataset(utterance_ids: &[String], n_train: usize, seed: u64) -> Result<DatasetSplit> {
    if n_train > 0 && n_train >= utterance_ids.len() {
        return Err(Error::InsufficientData { requested: n_train, available: utterance_ids.len() });
    }
    let mut ids: Vec<String> = utterance_ids.to_vec();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let eval = ids.split_off(n_train);
    Ok(DatasetSplit { train: ids, eval, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD_LINE: &str = "f0001|我爱唱|w o ai ch ang SP|C4 C4 E4 G4 G4 rest|0.4 0.4 0.35 0.5 0.5 0.2|0.1 0.3 0.35 0.12 0.38 0.2|0 0 0 0 0 0";

    #[test]
    fn parses_a_valid_line() {
        let utt = parse_transcription(GOOD_LINE, &PhonemeDict::standard()).unwrap();
        assert_eq!(utt.id, "f0001");
        assert_eq!(utt.text, vec!["我", "爱", "唱"]);
        assert_eq!(utt.len(), 6);
        assert_eq!(utt.note_pitches, vec![60, 60, 64, 67, 67, REST_PITCH_ID]);
        assert_eq!(utt.slur_flags, vec![0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn sp_carries_rest_sentinel() {
        let utt = parse_transcription(GOOD_LINE, &PhonemeDict::standard()).unwrap();
        assert_eq!(utt.phonemes[5], "SP");
        assert_eq!(utt.note_pitches[5], REST_PITCH_ID);
    }

    #[test]
    fn field_count_mismatch_is_malformed() {
        let line = "id|text|a b c";
        match parse_transcription(line, &PhonemeDict::standard()) {
            Err(Error::MalformedLine { expected: 7, got: 3, .. }) => {}
            other => panic!("expected MalformedLine, got {other:?}"),
        }
    }

    #[test]
    fn sequence_length_mismatch_is_typed() {
        let line = "id|我|w o a b c|C4 C4 C4 C4|0.1 0.1 0.1 0.1 0.1|0.1 0.1 0.1 0.1 0.1|0 0 0 0 0";
        match parse_transcription(line, &PhonemeDict::standard()) {
            Err(Error::LengthMismatch { .. }) => {}
            other => panic!("expected LengthMismatch, got {other:?}"),
        }
    }

    #[test]
    fn unknown_phoneme_is_typed() {
        let line = "id|我|w qq|C4 C4|0.1 0.1|0.1 0.1|0 0";
        match parse_transcription(line, &PhonemeDict::standard()) {
            Err(Error::UnknownPhoneme { symbol, .. }) => assert_eq!(symbol, "qq"),
            other => panic!("expected UnknownPhoneme, got {other:?}"),
        }
    }

    #[test]
    fn serialization_round_trips() {
        let dict = PhonemeDict::standard();
        let utt = parse_transcription(GOOD_LINE, &dict).unwrap();
        let line = serialize_transcription(&utt);
        let again = parse_transcription(&line, &dict).unwrap();
        assert_eq!(utt, again);
    }

    #[test]
    fn note_names_cover_black_keys_and_plain_midi() {
        assert_eq!(parse_note_pitch("A4"), Some(69));
        assert_eq!(parse_note_pitch("C4"), Some(60));
        assert_eq!(parse_note_pitch("G#4/Ab4"), Some(68));
        assert_eq!(parse_note_pitch("Bb3"), Some(58));
        assert_eq!(parse_note_pitch("69"), Some(69));
        assert_eq!(parse_note_pitch("rest"), Some(REST_PITCH_ID));
        assert_eq!(parse_note_pitch("H4"), None);
    }

    #[test]
    fn note_name_round_trip_over_midi_range() {
        for midi in 21u8..=108 {
            let name = format_note_pitch(midi);
            assert_eq!(parse_note_pitch(&name), Some(midi), "{name}");
        }
    }

    #[test]
    fn split_is_deterministic_and_exhaustive() {
        let ids: Vec<String> = (0..50).map(|i| format!("u{i:03}")).collect();
        let a = split_dataset(&ids, 40, 7).unwrap();
        let b = split_dataset(&ids, 40, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 40);
        assert_eq!(a.eval.len(), 10);
        let mut all: Vec<&String> = a.train.iter().chain(a.eval.iter()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 50);
    }

    #[test]
    fn split_boundary_and_errors() {
        let ids: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        let zero = split_dataset(&ids, 0, 1).unwrap();
        assert!(zero.train.is_empty());
        assert_eq!(zero.eval.len(), 5);
        assert!(matches!(split_dataset(&ids, 5, 1), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn different_seeds_differ() {
        let ids: Vec<String> = (0..50).map(|i| i.to_string()).collect();
        let a = split_dataset(&ids, 25, 1).unwrap();
        let b = split_dataset(&ids, 25, 2).unwrap();
        assert_ne!(a.train, b.train);
    }
}
