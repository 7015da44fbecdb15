//! In-memory training data and padded batch assembly.

use candle_core::{DType, Device, Tensor};
use std::path::Path;

use svs_core::config::{RunConfig, SemVariant};
use svs_core::corpus::{read_wav, Utterance};
use svs_core::dsp::FrameFeatures;
use svs_core::lexicon::{PhonemeDict, PhonemeVocab, PinyinLexicon};
use svs_core::manifest::{FeatureCache, ManifestEntry};
use svs_core::score::{build_score_features, phoneme_frame_counts, ScoreFeatures};
use svs_core::semantic::{
    build_expansion_plan, embed_words, plan_position_sources, ExpansionPlan, SemanticProvider,
    WordEmbeddingSeq,
};

use crate::error::{ModelError, Result};
use crate::modules::lengths_to_mask;

pub struct DataItem {
    pub id: String,
    pub utterance: Utterance,
    pub score: ScoreFeatures,
    /// Ground-truth frames per phoneme; sums to `features.n_frames`.
    pub gt_frames: Vec<u32>,
    pub features: FrameFeatures,
    pub samples: Vec<f32>,
    pub words: Option<WordEmbeddingSeq>,
    pub plan: Option<ExpansionPlan>,
}

impl DataItem {
    pub fn n_frames(&self) -> usize {
        self.features.n_frames
    }
}

/// Load manifest entries into memory-resident training items. Features come
/// from the cache when fresh and are recomputed otherwise; lyric embeddings
/// come from the provider, expanded per the upsample plan.
pub fn load_items(
    data_dir: &Path,
    entries: &[ManifestEntry],
    cfg: &RunConfig,
    vocab: &PhonemeVocab,
    provider: Option<&dyn SemanticProvider>,
    lexicon: &PinyinLexicon,
    dict: &PhonemeDict,
) -> Result<Vec<DataItem>> {
    let cache_key = cfg.feature_hash();
    let cache = FeatureCache::create(data_dir.join("features"), &cache_key[..16])?;
    let mut items = Vec::with_capacity(entries.len());
    for entry in entries {
        let utterance = entry.to_utterance();
        let wav_path = data_dir.join(&entry.audio);
        let wave = read_wav(&wav_path)?;
        if wave.sample_rate != cfg.stft.sample_rate {
            return Err(ModelError::ShapeMismatch(format!(
                "{}: expected {} Hz audio in the prepared corpus, got {}",
                entry.id, cfg.stft.sample_rate, wave.sample_rate
            )));
        }
        let features = match cache.load(&entry.id)? {
            Some(f) => f,
            None => {
                let f = svs_core::prepare::extract_features(&wave.samples, cfg)?;
                cache.store(&entry.id, &f)?;
                f
            }
        };
        let score = build_score_features(&utterance, vocab, &cfg.stft)?;
        let gt_frames =
            phoneme_frame_counts(&utterance.phoneme_durations_sec, &cfg.stft, features.n_frames);

        let (words, plan) = match provider {
            Some(p) if cfg.sem_variant != SemVariant::Off => {
                let plan = build_expansion_plan(
                    &utterance.id,
                    &utterance.text,
                    &utterance.phonemes,
                    lexicon,
                    dict,
                )?;
                let words = embed_words(p, &utterance.text)?;
                (Some(words), Some(plan))
            }
            _ => (None, None),
        };

        items.push(DataItem {
            id: entry.id.clone(),
            utterance,
            score,
            gt_frames,
            features,
            samples: wave.samples,
            words,
            plan,
        });
    }
    Ok(items)
}

/// Semantic inputs in the padded batch.
pub enum SemBatch {
    Off,
    /// Phoneme-level word vectors, already expanded: [B, P, input_dim].
    Standard(Tensor),
    /// Word-level vectors plus the in-graph expansion recipe.
    Reversed {
        words: Tensor,      // [B, W, input_dim]
        word_mask: Tensor,  // [B, W]
        source_idx: Vec<Vec<u32>>,
        non_rest: Tensor,   // [B, P]
    },
}

pub struct Batch {
    pub ids: Vec<String>,
    pub phoneme_ids: Tensor,
    pub note_pitch_ids: Tensor,
    pub slur_ids: Tensor,
    pub log_note_frames: Tensor,
    pub ph_mask: Tensor,
    pub n_phonemes: Vec<usize>,
    pub dur_ratio_target: Tensor,
    pub gt_counts: Vec<Vec<u32>>,
    pub n_frames: Vec<usize>,
    pub max_frames: usize,
    pub frame_mask: Tensor,
    pub note_lf0_frames: Tensor,
    pub gt_lf0: Tensor,
    pub pitch_mask: Tensor,
    pub gt_energy_log: Tensor,
    pub linear_spec: Tensor,
    pub waves: Tensor,
    pub wave_lens: Vec<usize>,
    pub sem: SemBatch,
}

pub fn make_batch(items: &[&DataItem], cfg: &RunConfig, device: &Device, dtype: DType) -> Result<Batch> {
    let b = items.len();
    if b == 0 {
        return Err(ModelError::ShapeMismatch("empty batch".into()));
    }
    let max_p = items.iter().map(|i| i.score.len()).max().expect("non-empty");
    let max_t = items.iter().map(|i| i.n_frames()).max().expect("non-empty");
    let max_l = items.iter().map(|i| i.samples.len()).max().expect("non-empty");
    let n_bins = items[0].features.n_bins;

    let mut phoneme_ids = vec![0u32; b * max_p];
    let mut note_pitch_ids = vec![0u32; b * max_p];
    let mut slur_ids = vec![0u32; b * max_p];
    let mut log_note_frames = vec![0f32; b * max_p];
    let mut dur_ratio_target = vec![0f32; b * max_p];
    let mut note_lf0_frames = vec![0f32; b * max_t];
    let mut gt_lf0 = vec![0f32; b * max_t];
    let mut pitch_mask = vec![0f32; b * max_t];
    let mut gt_energy_log = vec![0f32; b * max_t];
    let mut linear = vec![0f32; b * n_bins * max_t];
    let mut waves = vec![0f32; b * max_l];

    for (i, item) in items.iter().enumerate() {
        let p = item.score.len();
        for j in 0..p {
            phoneme_ids[i * max_p + j] = item.score.phoneme_ids[j];
            note_pitch_ids[i * max_p + j] = item.score.note_pitch_ids[j] as u32;
            slur_ids[i * max_p + j] = item.score.slur_ids[j] as u32;
            log_note_frames[i * max_p + j] = (item.score.note_frame_counts[j] as f32).ln_1p();
            dur_ratio_target[i * max_p + j] =
                item.gt_frames[j] as f32 / item.score.note_frame_counts[j].max(1) as f32;
        }
        let t = item.n_frames();
        let mut frame = 0usize;
        for (j, &count) in item.gt_frames.iter().enumerate() {
            for _ in 0..count {
                note_lf0_frames[i * max_t + frame] = item.score.note_lf0[j] as f32;
                frame += 1;
            }
        }
        debug_assert_eq!(frame, t);
        for f in 0..t {
            gt_lf0[i * max_t + f] = item.features.lf0[f];
            let voiced = item.features.voicing[f] == 1;
            let note_present = note_lf0_frames[i * max_t + f] > 0.0;
            pitch_mask[i * max_t + f] = if voiced && note_present { 1.0 } else { 0.0 };
            gt_energy_log[i * max_t + f] = item.features.energy[f].max(1e-5).ln();
            for k in 0..n_bins {
                // feature rows are frame-major, the model wants [bins, T]
                linear[i * n_bins * max_t + k * max_t + f] = item.features.linear_spec[f * n_bins + k];
            }
        }
        waves[i * max_l..i * max_l + item.samples.len()].copy_from_slice(&item.samples);
    }

    let to = |v: Vec<f32>, shape: &[usize]| -> Result<Tensor> {
        Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?)
    };

    let n_phonemes: Vec<usize> = items.iter().map(|i| i.score.len()).collect();
    let n_frames: Vec<usize> = items.iter().map(|i| i.n_frames()).collect();

    let sem = build_sem_batch(items, cfg, max_p, device, dtype)?;

    Ok(Batch {
        ids: items.iter().map(|i| i.id.clone()).collect(),
        phoneme_ids: Tensor::from_vec(phoneme_ids, &[b, max_p], device)?,
        note_pitch_ids: Tensor::from_vec(note_pitch_ids, &[b, max_p], device)?,
        slur_ids: Tensor::from_vec(slur_ids, &[b, max_p], device)?,
        log_note_frames: to(log_note_frames, &[b, max_p])?.reshape((b, max_p, 1))?,
        ph_mask: lengths_to_mask(&n_phonemes, max_p, device, dtype)?,
        n_phonemes,
        dur_ratio_target: to(dur_ratio_target, &[b, max_p])?,
        gt_counts: items.iter().map(|i| i.gt_frames.clone()).collect(),
        max_frames: max_t,
        frame_mask: lengths_to_mask(&n_frames, max_t, device, dtype)?,
        n_frames,
        note_lf0_frames: to(note_lf0_frames, &[b, max_t])?,
        gt_lf0: to(gt_lf0, &[b, max_t])?,
        pitch_mask: to(pitch_mask, &[b, max_t])?,
        gt_energy_log: to(gt_energy_log, &[b, max_t])?,
        linear_spec: to(linear, &[b, n_bins, max_t])?,
        waves: to(waves, &[b, max_l])?,
        wave_lens: items.iter().map(|i| i.samples.len()).collect(),
        sem,
    })
}

fn build_sem_batch(
    items: &[&DataItem],
    cfg: &RunConfig,
    max_p: usize,
    device: &Device,
    dtype: DType,
) -> Result<SemBatch> {
    if cfg.sem_variant == SemVariant::Off {
        return Ok(SemBatch::Off);
    }
    let b = items.len();
    let dim = cfg.model.semantic_input_dim;
    match cfg.sem_variant {
        SemVariant::Standard => {
            let mut data = vec![0f32; b * max_p * dim];
            for (i, item) in items.iter().enumerate() {
                let (words, plan) = sem_parts(item)?;
                check_dim(item, words, dim)?;
                let expanded = svs_core::semantic::expand_embeddings(words, plan)?;
                data[i * max_p * dim..i * max_p * dim + expanded.len()].copy_from_slice(&expanded);
            }
            Ok(SemBatch::Standard(
                Tensor::from_vec(data, &[b, max_p, dim], device)?.to_dtype(dtype)?,
            ))
        }
        SemVariant::Reversed => {
            let max_w = items
                .iter()
                .map(|i| i.words.as_ref().map(|w| w.n_words()).unwrap_or(0))
                .max()
                .expect("non-empty");
            let mut data = vec![0f32; b * max_w * dim];
            let mut word_lens = Vec::with_capacity(b);
            let mut source_idx = Vec::with_capacity(b);
            let mut non_rest = vec![0f32; b * max_p];
            for (i, item) in items.iter().enumerate() {
                let (words, plan) = sem_parts(item)?;
                check_dim(item, words, dim)?;
                data[i * max_w * dim..i * max_w * dim + words.vectors.len()]
                    .copy_from_slice(&words.vectors);
                word_lens.push(words.n_words());
                let (src, flags) = plan_position_sources(plan)?;
                for (j, flag) in flags.iter().enumerate() {
                    non_rest[i * max_p + j] = *flag as f32;
                }
                source_idx.push(src);
            }
            Ok(SemBatch::Reversed {
                words: Tensor::from_vec(data, &[b, max_w, dim], device)?.to_dtype(dtype)?,
                word_mask: lengths_to_mask(&word_lens, max_w, device, dtype)?,
                source_idx,
                non_rest: Tensor::from_vec(non_rest, &[b, max_p], device)?.to_dtype(dtype)?,
            })
        }
        SemVariant::Off => unreachable!(),
    }
}

fn sem_parts(item: &DataItem) -> Result<(&WordEmbeddingSeq, &ExpansionPlan)> {
    match (&item.words, &item.plan) {
        (Some(w), Some(p)) => Ok((w, p)),
        _ => Err(ModelError::ShapeMismatch(format!(
            "{}: semantic variant is on but the item has no embeddings",
            item.id
        ))),
    }
}

fn check_dim(item: &DataItem, words: &WordEmbeddingSeq, dim: usize) -> Result<()> {
    if words.dim != dim {
        return Err(ModelError::ShapeMismatch(format!(
            "{}: provider dim {} but model expects {}",
            item.id, words.dim, dim
        )));
    }
    Ok(())
}
