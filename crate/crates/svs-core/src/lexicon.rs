//! Pinyin and phoneme bookkeeping: the pinyin -> phoneme dictionary, the
//! character -> pinyin lexicon, and the phoneme id vocabulary.
//!
//! The dictionary follows the transcription convention of annotated Mandarin
//! singing corpora: each syllable is an optional initial plus a final, "v"
//! spells the umlauted u, and the literal markers SP (silence) and AP
//! (aspirate) ride along in the phoneme stream without being syllables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SP: &str = "SP";
pub const AP: &str = "AP";

/// Ordered longest-first so "zh" wins over "z".
const INITIALS: &[&str] = &[
    "zh", "ch", "sh", "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "r",
    "z", "c", "s", "y", "w",
];

const FINALS: &[&str] = &[
    "a", "ai", "an", "ang", "ao", "e", "ei", "en", "eng", "er", "i", "ia", "ian", "iang", "iao",
    "ie", "in", "ing", "iong", "iu", "o", "ong", "ou", "u", "ua", "uai", "uan", "uang", "ui",
    "un", "uo", "v", "van", "ve", "vn",
];

pub fn is_rest(symbol: &str) -> bool {
    symbol == SP || symbol == AP
}

pub fn is_initial(symbol: &str) -> bool {
    INITIALS.contains(&symbol)
}

/// Split a toneless pinyin syllable into its phonemes by rule. After j/q/x/y
/// a leading "u" in the final denotes the umlauted vowel and becomes "v".
pub fn split_pinyin(pinyin: &str) -> Vec<String> {
    let initial = INITIALS.iter().find(|i| pinyin.starts_with(**i) && pinyin.len() > i.len());
    match initial {
        Some(i) => {
            let mut final_part = pinyin[i.len()..].to_string();
            if matches!(*i, "j" | "q" | "x" | "y") && final_part.starts_with('u') {
                final_part.replace_range(0..1, "v");
            }
            vec![i.to_string(), final_part]
        }
        None => vec![pinyin.to_string()],
    }
}

/// Pinyin -> phonemes, rule-based with optional file-loaded overrides.
#[derive(Debug, Clone, Default)]
pub struct PhonemeDict {
    overrides: HashMap<String, Vec<String>>,
    extra_symbols: BTreeSet<String>,
}

impl PhonemeDict {
    pub fn standard() -> Self {
        Self::default()
    }

    /// Extend the rule-based dictionary from a file of lines
    /// `pinyin<TAB or space>phoneme [phoneme...]`. `#` starts a comment.
    pub fn load_overrides(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let pinyin = parts
                .next()
                .ok_or_else(|| Error::parse(path, format!("line {}: empty entry", lineno + 1)))?;
            let phonemes: Vec<String> = parts.map(str::to_string).collect();
            if phonemes.is_empty() {
                return Err(Error::parse(path, format!("line {}: no phonemes for {pinyin}", lineno + 1)));
            }
            self.extra_symbols.extend(phonemes.iter().cloned());
            self.overrides.insert(pinyin.to_string(), phonemes);
        }
        Ok(())
    }

    pub fn phonemes_of(&self, pinyin: &str) -> Vec<String> {
        if let Some(p) = self.overrides.get(pinyin) {
            return p.clone();
        }
        split_pinyin(pinyin)
    }

    pub fn is_known_phoneme(&self, symbol: &str) -> bool {
        is_rest(symbol)
            || INITIALS.contains(&symbol)
            || FINALS.contains(&symbol)
            || self.extra_symbols.contains(symbol)
    }
}

/// Character -> candidate pinyin readings, first reading preferred.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PinyinLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl PinyinLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, character: &str, pinyin: &str) {
        let readings = self.entries.entry(character.to_string()).or_default();
        if !readings.iter().any(|r| r == pinyin) {
            readings.push(pinyin.to_string());
        }
    }

    pub fn readings(&self, character: &str) -> Option<&[String]> {
        self.entries.get(character).map(|v| v.as_slice())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lines of `character<TAB or space>pinyin [pinyin...]`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lex = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let ch = parts
                .next()
                .ok_or_else(|| Error::parse(path, format!("line {}: empty entry", lineno + 1)))?;
            let mut any = false;
            for py in parts {
                lex.insert(ch, py);
                any = true;
            }
            if !any {
                return Err(Error::parse(path, format!("line {}: no readings for {ch}", lineno + 1)));
            }
        }
        Ok(lex)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (ch, readings) in &self.entries {
            out.push_str(ch);
            for r in readings {
                out.push(' ');
                out.push_str(r);
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// A small built-in lexicon covering the synthetic fixture vocabulary.
    pub fn bundled() -> Self {
        let mut lex = Self::new();
        for (ch, py) in [
            ("我", "wo"),
            ("你", "ni"),
            ("他", "ta"),
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
            ("安", "an"),
            ("云", "yun"),
            ("水", "shui"),
            ("火", "huo"),
            ("梦", "meng"),
            ("歌", "ge"),
            ("唱", "chang"),
            ("飞", "fei"),
            ("鸟", "niao"),
            ("春", "chun"),
            ("雪", "xue"),
            ("雨", "yu"),
            ("啊", "a"),
            ("在", "zai"),
            ("是", "shi"),
        ] {
            lex.insert(ch, py);
        }
        // polyphonic: musical "yue" vs verbal "le"
        lex.insert("乐", "le");
        lex.insert("乐", "yue");
        lex
    }

    /// Derive readings from transcriptions themselves: collapse slurred
    /// repeats, drop SP/AP, segment the remaining phonemes into syllables and
    /// pair them with the lyric characters when the counts line up.
    pub fn derive_from_corpus<'a>(
        utterances: impl IntoIterator<Item = &'a crate::corpus::Utterance>,
    ) -> Self {
        let mut lex = Self::new();
        for utt in utterances {
            let mut stream: Vec<&str> = Vec::new();
            for (i, p) in utt.phonemes.iter().enumerate() {
                if is_rest(p) {
                    continue;
                }
                if utt.slur_flags[i] == 1 && stream.last() == Some(&p.as_str()) {
                    continue;
                }
                stream.push(p);
            }
            let mut syllables: Vec<String> = Vec::new();
            let mut i = 0;
            while i < stream.len() {
                if INITIALS.contains(&stream[i]) && i + 1 < stream.len() && !INITIALS.contains(&stream[i + 1]) {
                    syllables.push(format!("{}{}", stream[i], stream[i + 1]));
                    i += 2;
                } else {
                    syllables.push(stream[i].to_string());
                    i += 1;
                }
            }
            let chars: Vec<String> = utt.text.clone();
            if chars.len() == syllables.len() {
                for (ch, py) in chars.iter().zip(&syllables) {
                    lex.insert(ch, py);
                }
            }
        }
        lex
    }
}

/// Phoneme symbol <-> dense id table; id 0 is reserved for padding.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PhonemeVocab {
    symbols: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl PhonemeVocab {
    pub fn from_symbols(symbols: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = symbols.into_iter().collect();
        let mut all = vec!["<pad>".to_string()];
        all.extend(set);
        let mut vocab = Self { symbols: all, index: HashMap::new() };
        vocab.rebuild_index();
        vocab
    }

    pub fn from_utterances<'a>(utts: impl IntoIterator<Item = &'a crate::corpus::Utterance>) -> Self {
        Self::from_symbols(utts.into_iter().flat_map(|u| u.phonemes.iter().cloned()))
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
    }

    pub fn id_of(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    pub fn symbol_of(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let symbols: Vec<String> =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        let mut vocab = Self { symbols, index: HashMap::new() };
        vocab.rebuild_index();
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.symbols)
            .expect("vocab serialization cannot fail");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
