//! High-level orchestration shared by the CLI and the acceptance suite:
//! checkpoint loading, batch synthesis and split evaluation.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use rayon::prelude::*;

use svs_core::config::RunConfig;
use svs_core::corpus::{read_wav, write_wav};
use svs_core::lexicon::PhonemeVocab;
use svs_core::manifest::{read_manifest, ManifestEntry};
use svs_core::score::phoneme_frame_counts;
use svs_model::data::DataItem;
use svs_model::synth::{synthesize, SynthInput, SynthesisResult};
use svs_model::trainer::load_data_dir_with;
use svs_model::{AcousticModel, ModelError};

use crate::eval::{compute_metrics, MetricReport, UtteranceMetrics};

pub struct LoadedModel {
    pub model: AcousticModel,
    pub cfg: RunConfig,
    pub vocab: PhonemeVocab,
}

/// Rebuild the model from the checkpoint's embedded config and verify the
/// weights against the data directory's vocabulary.
pub fn load_model(checkpoint: &Path, data_dir: &Path) -> Result<LoadedModel, ModelError> {
    let info = svs_model::checkpoint::read_info(checkpoint)?;
    let cfg = info.config;
    cfg.validate()?;
    let vocab = PhonemeVocab::load(&data_dir.join("vocab.json"))?;
    let mut model = AcousticModel::new(&cfg, &vocab, &Device::Cpu, DType::F32)?;
    svs_model::checkpoint::load(&mut model, &vocab, checkpoint)?;
    Ok(LoadedModel { model, cfg, vocab })
}

pub fn manifest_path(data_dir: &Path, split: &str) -> PathBuf {
    data_dir.join(format!("manifest.{split}.jsonl"))
}

pub fn load_split(
    data_dir: &Path,
    cfg: &RunConfig,
    split: &str,
    ids: Option<&[String]>,
    limit: Option<usize>,
) -> Result<Vec<DataItem>, ModelError> {
    let mut entries: Vec<ManifestEntry> = read_manifest(&manifest_path(data_dir, split))?;
    if let Some(ids) = ids {
        entries.retain(|e| ids.contains(&e.id));
    }
    if let Some(limit) = limit {
        entries.truncate(limit);
    }
    load_data_dir_with(data_dir, cfg, &entries)
}

fn per_item_seed(seed: u64, id: &str) -> u64 {
    let mut h = seed ^ 0xcbf29ce484222325;
    for b in id.as_bytes() {
        h = h.wrapping_mul(0x100000001b3) ^ (*b as u64);
    }
    h
}

pub fn synth_item(
    loaded: &LoadedModel,
    item: &DataItem,
    noise_scale: f64,
    seed: u64,
) -> Result<SynthesisResult, ModelError> {
    let input = SynthInput {
        id: item.id.clone(),
        score: item.score.clone(),
        words: item.words.clone(),
        plan: item.plan.clone(),
    };
    synthesize(&loaded.model, &input, noise_scale, per_item_seed(seed, &item.id))
}

/// Synthesize items and write the waveforms; returns (id, wav path) pairs.
pub fn synth_to_dir(
    loaded: &LoadedModel,
    items: &[DataItem],
    out_dir: &Path,
    noise_scale: f64,
    seed: u64,
) -> Result<Vec<(String, PathBuf)>, ModelError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| ModelError::Core(svs_core::Error::io(out_dir, e)))?;
    items
        .par_iter()
        .map(|item| {
            let result = synth_item(loaded, item, noise_scale, seed)?;
            let path = out_dir.join(format!("{}.wav", item.id));
            write_wav(&path, &result.waveform)?;
            Ok((item.id.clone(), path))
        })
        .collect()
}

/// Synthesize every item of a split and score it against its reference.
pub fn eval_split(
    loaded: &LoadedModel,
    data_dir: &Path,
    items: &[DataItem],
    variant_label: &str,
    noise_scale: f64,
    seed: u64,
) -> Result<MetricReport, ModelError> {
    let per_utterance: Vec<UtteranceMetrics> = items
        .par_iter()
        .map(|item| -> Result<UtteranceMetrics, ModelError> {
            let synthesis = synth_item(loaded, item, noise_scale, seed)?;
            let reference = read_wav(&data_dir.join(&item.utterance.audio_path))?;
            let gt_frames = phoneme_frame_counts(
                &item.utterance.phoneme_durations_sec,
                &loaded.cfg.stft,
                item.features.n_frames,
            );
            Ok(compute_metrics(&item.id, &reference, &gt_frames, &synthesis, &loaded.cfg)?)
        })
        .collect::<Result<_, _>>()?;
    Ok(MetricReport::aggregate(variant_label, per_utterance))
}

/// Human label for a model configuration's ablation axis.
pub fn variant_label(cfg: &RunConfig) -> String {
    let sem = match cfg.sem_variant {
        svs_core::config::SemVariant::Standard => "sem",
        svs_core::config::SemVariant::Reversed => "reversed-sem",
        svs_core::config::SemVariant::Off => "no-sem",
    };
    let energy = if cfg.model.use_energy { "energy" } else { "no-energy" };
    format!("{sem}+{energy}")
}
