//! Lyric semantics: word-level contextual embeddings, the expansion plan that
//! upsamples them to phoneme level, and the pluggable embedding provider.
//!
//! Expansion works in three recorded steps. For lyric characters with
//! dictionary phonemes P_1..P_n, `n1[w]` counts the phonemes of word w; the
//! word sequence extended by `n1` has length m, and `n2[j]` counts how many
//! times extended position j's phoneme repeats in the annotated sequence
//! (slurred notes repeat their vowel). SP/AP positions are recorded in
//! `rest_indices` and receive the all-zero vector.

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{is_rest, PhonemeDict, PinyinLexicon};

pub const WORD_EMBEDDING_DIM: usize = 768;

/// One contextual vector per lyric character.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddingSeq {
    pub words: Vec<String>,
    /// Row-major n_words x dim.
    pub vectors: Vec<f32>,
    pub dim: usize,
}

impl WordEmbeddingSeq {
    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn vector(&self, w: usize) -> &[f32] {
        &self.vectors[w * self.dim..(w + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.vectors.len() != self.words.len() * self.dim {
            return Err(Error::ShapeMismatch(format!(
                "{} words but {} values at dim {}",
                self.words.len(),
                self.vectors.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

/// Bookkeeping for the word-to-phoneme upsample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPlan {
    /// Phonemes per word.
    pub n1: Vec<usize>,
    /// Repetition count per extended position; sums to the non-rest length.
    pub n2: Vec<usize>,
    /// SP/AP positions in the final phoneme sequence.
    pub rest_indices: Vec<usize>,
    /// Total phoneme-sequence length including rests.
    pub output_len: usize,
}

impl ExpansionPlan {
    pub fn validate(&self) -> Result<()> {
        let m: usize = self.n1.iter().sum();
        if m != self.n2.len() {
            return Err(Error::PlanMismatch(format!(
                "sum(n1)={m} but n2 has {} entries",
                self.n2.len()
            )));
        }
        let expanded: usize = self.n2.iter().sum();
        if expanded + self.rest_indices.len() != self.output_len {
            return Err(Error::PlanMismatch(format!(
                "sum(n2)={expanded} + rests={} != output {}",
                self.rest_indices.len(),
                self.output_len
            )));
        }
        Ok(())
    }
}

/// Choose a reading for each word (greedy alignment against the utterance
/// phonemes decides among polyphonic readings), then derive n1, n2 and the
/// rest indices by walking the annotated sequence left to right.
pub fn build_expansion_plan(
    utterance_id: &str,
    text: &[String],
    phonemes: &[String],
    lexicon: &PinyinLexicon,
    dict: &PhonemeDict,
) -> Result<ExpansionPlan> {
    // the non-rest symbol stream the dictionary expansion must explain
    let stream: Vec<&str> = phonemes.iter().filter(|p| !is_rest(p)).map(String::as_str).collect();

    let mut expected: Vec<String> = Vec::new();
    let mut n1 = Vec::with_capacity(text.len());
    let mut cursor = 0usize; // consumed prefix of `stream`
    for word in text {
        let readings = lexicon.readings(word).ok_or_else(|| Error::AlignmentFailure {
            id: utterance_id.to_string(),
            detail: format!("no lexicon reading for {word:?}"),
        })?;
        let chosen = readings
            .iter()
            .find(|r| matches_at(&dict.phonemes_of(r), &stream[cursor.min(stream.len())..]))
            .unwrap_or(&readings[0]);
        let phs = dict.phonemes_of(chosen);
        cursor += consumed_by(&phs, &stream[cursor.min(stream.len())..]);
        n1.push(phs.len());
        expected.extend(phs);
    }

    // walk the full sequence, counting repeats per expected phoneme
    let mut n2 = vec![0usize; expected.len()];
    let mut rest_indices = Vec::new();
    let mut j = 0usize; // current expected position
    for (i, symbol) in phonemes.iter().enumerate() {
        if is_rest(symbol) {
            rest_indices.push(i);
            continue;
        }
        let fail = |detail: String| Error::AlignmentFailure { id: utterance_id.to_string(), detail };
        if j >= expected.len() {
            return Err(fail(format!("trailing phoneme {symbol:?} at {i}")));
        }
        if symbol == &expected[j] {
            // a satisfied position yields to an identical successor so
            // repeated monosyllables each keep one occurrence
            if n2[j] > 0 && j + 1 < expected.len() && expected[j + 1] == *symbol {
                j += 1;
            }
            n2[j] += 1;
        } else if n2[j] > 0 && j + 1 < expected.len() && symbol == &expected[j + 1] {
            j += 1;
            n2[j] += 1;
        } else {
            return Err(fail(format!(
                "phoneme {symbol:?} at {i} does not continue {:?} (position {j})",
                expected.get(j)
            )));
        }
    }
    if j + 1 < expected.len() || (j < expected.len() && n2[j] == 0) {
        return Err(Error::AlignmentFailure {
            id: utterance_id.to_string(),
            detail: format!("dictionary expects {} phonemes, sequence ended at {j}", expected.len()),
        });
    }

    let plan = ExpansionPlan { n1, n2, rest_indices, output_len: phonemes.len() };
    plan.validate()?;
    Ok(plan)
}

/// Does `phs` consume a prefix of `stream` (each phoneme once or more)?
fn matches_at(phs: &[String], stream: &[&str]) -> bool {
    consumed_by(phs, stream) > 0 || phs.is_empty()
}

fn consumed_by(phs: &[String], stream: &[&str]) -> usize {
    let mut i = 0usize;
    for (k, p) in phs.iter().enumerate() {
        if i >= stream.len() || stream[i] != p {
            return 0;
        }
        i += 1;
        // repeats belong to this phoneme unless the next expected phoneme is identical
        let next_same = phs.get(k + 1).is_some_and(|n| n == p);
        if !next_same {
            while i < stream.len() && stream[i] == p {
                i += 1;
            }
        }
    }
    i
}

/// Replicate word vectors across their phoneme positions and insert zero
/// vectors at the rest indices.
pub fn expand_embeddings(words: &WordEmbeddingSeq, plan: &ExpansionPlan) -> Result<Vec<f32>> {
    words.validate()?;
    plan.validate()?;
    if words.n_words() != plan.n1.len() {
        return Err(Error::PlanMismatch(format!(
            "{} word vectors but n1 covers {} words",
            words.n_words(),
            plan.n1.len()
        )));
    }

    let dim = words.dim;
    let mut out = vec![0.0f32; plan.output_len * dim];
    let mut rests = plan.rest_indices.iter().peekable();
    let mut position = 0usize;
    let mut extended = 0usize; // index into n2
    for (w, &count) in plan.n1.iter().enumerate() {
        let vector = words.vector(w);
        for _ in 0..count {
            for _ in 0..plan.n2[extended] {
                while rests.peek() == Some(&&position) {
                    rests.next();
                    position += 1; // zero vector already in place
                }
                out[position * dim..(position + 1) * dim].copy_from_slice(vector);
                position += 1;
            }
            extended += 1;
        }
    }
    while rests.next().is_some() {
        position += 1;
    }
    if position != plan.output_len {
        return Err(Error::PlanMismatch(format!(
            "expansion produced {position} positions, expected {}",
            plan.output_len
        )));
    }
    Ok(out)
}

/// Per output position: the source word index (0 at rests) and a non-rest
/// flag. This is the gather form of [`expand_embeddings`], used when the
/// expansion has to run inside the computation graph.
pub fn plan_position_sources(plan: &ExpansionPlan) -> Result<(Vec<u32>, Vec<u8>)> {
    plan.validate()?;
    let mut source = vec![0u32; plan.output_len];
    let mut non_rest = vec![0u8; plan.output_len];
    let mut rests = plan.rest_indices.iter().peekable();
    let mut position = 0usize;
    let mut extended = 0usize;
    for (w, &count) in plan.n1.iter().enumerate() {
        for _ in 0..count {
            for _ in 0..plan.n2[extended] {
                while rests.peek() == Some(&&position) {
                    rests.next();
                    position += 1;
                }
                source[position] = w as u32;
                non_rest[position] = 1;
                position += 1;
            }
            extended += 1;
        }
    }
    Ok((source, non_rest))
}

/// Source of word-level contextual embeddings. Implementations must be
/// deterministic for fixed weights; the production binding wraps a frozen
/// pre-trained text encoder, the test binding is a seeded stub.
pub trait SemanticProvider: Send + Sync {
    fn dim(&self) -> usize;
    /// One vector per lyric character, row-major.
    fn embed(&self, words: &[String]) -> Result<WordEmbeddingSeq>;
}

/// Deterministic offline provider: each character's vector is seeded by its
/// identity and the configured seed, so the whole pipeline runs without any
/// model checkpoint and reproduces bit-for-bit.
#[derive(Debug, Clone)]
pub struct StubProvider {
    pub seed: u64,
    pub dim: usize,
}

impl StubProvider {
    pub fn new(seed: u64) -> Self {
        Self { seed, dim: WORD_EMBEDDING_DIM }
    }
}

impl SemanticProvider for StubProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, words: &[String]) -> Result<WordEmbeddingSeq> {
        let mut vectors = Vec::with_capacity(words.len() * self.dim);
        for word in words {
            let mut h = self.seed;
            for b in word.as_bytes() {
                h = h.wrapping_mul(0x100000001b3).wrapping_add(*b as u64);
            }
            let mut rng = ChaCha20Rng::seed_from_u64(h);
            for _ in 0..self.dim {
                let u = rng.next_u32() as f32 / u32::MAX as f32;
                vectors.push((u - 0.5) * 2.0);
            }
        }
        Ok(WordEmbeddingSeq { words: words.to_vec(), vectors, dim: self.dim })
    }
}

/// Provider backed by a directory of precomputed embeddings, one JSON file per
/// utterance id: `{ "words": [...], "dim": 768, "vectors": [...] }`. This is
/// how checkpoint-derived embeddings enter the pipeline offline.
pub struct CachedProvider {
    dir: PathBuf,
    dim: usize,
}

impl CachedProvider {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::ProviderUnavailable(format!(
                "embedding cache {} is not a directory",
                dir.display()
            )));
        }
        Ok(Self { dir, dim: WORD_EMBEDDING_DIM })
    }

    pub fn store(&self, utterance_id: &str, seq: &WordEmbeddingSeq) -> Result<()> {
        seq.validate()?;
        let record = CachedRecord {
            words: seq.words.clone(),
            dim: seq.dim,
            vectors: seq.vectors.clone(),
        };
        let path = self.path_of(utterance_id);
        let text = serde_json::to_string(&record).expect("embedding record serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(&self, utterance_id: &str) -> Result<WordEmbeddingSeq> {
        let path = self.path_of(utterance_id);
        let text = std::fs::read_to_string(&path)
            .map_err(|_| Error::ProviderUnavailable(format!("no cached embedding for {utterance_id}")))?;
        let record: CachedRecord =
            serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
        let seq = WordEmbeddingSeq { words: record.words, vectors: record.vectors, dim: record.dim };
        seq.validate()?;
        Ok(seq)
    }

    fn path_of(&self, utterance_id: &str) -> PathBuf {
        self.dir.join(format!("{utterance_id}.emb.json"))
    }
}

#[derive(Serialize, Deserialize)]
struct CachedRecord {
    words: Vec<String>,
    dim: usize,
    vectors: Vec<f32>,
}

/// Embed utterance words, checking that the provider kept the one-vector-per-
/// character alignment.
pub fn embed_words(provider: &dyn SemanticProvider, words: &[String]) -> Result<WordEmbeddingSeq> {
    let seq = provider.embed(words)?;
    seq.validate()?;
    if seq.n_words() != words.len() {
        return Err(Error::TokenizationMismatch(format!(
            "{} characters but provider returned {} vectors",
            words.len(),
            seq.n_words()
        )));
    }
    Ok(seq)
}

pub fn load_provider(kind: &str, seed: u64, cache_dir: Option<&Path>) -> Result<Box<dyn SemanticProvider>> {
    match kind {
        "stub" => Ok(Box::new(StubProvider::new(seed))),
        "cache" => {
            let dir = cache_dir.ok_or_else(|| {
                Error::ProviderUnavailable("cache provider needs an embedding directory".into())
            })?;
            Ok(Box::new(CachedDirProvider(CachedProvider::open(dir)?)))
        }
        other => Err(Error::ProviderUnavailable(format!("unknown provider kind {other:?}"))),
    }
}

/// Adapter that keys the cache by the joined word string when no utterance id
/// is available.
struct CachedDirProvider(CachedProvider);

impl SemanticProvider for CachedDirProvider {
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn embed(&self, words: &[String]) -> Result<WordEmbeddingSeq> {
        self.0.load(&words.concat())
    }
}
