//! Corpus preparation: parse transcriptions, resample audio, extract frame
//! features, fit the energy quantizer on the training split and write the
//! manifests plus supporting files a run directory needs.

use std::path::PathBuf;

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::corpus::{ingest_audio, parse_transcription, split_dataset, write_wav, Utterance, Waveform};
use crate::dsp::{self, F0Params, FrameFeatures, MelParams};
use crate::error::{Error, Result};
use crate::lexicon::{PhonemeDict, PhonemeVocab, PinyinLexicon};
use crate::manifest::{write_manifest, FeatureCache, ManifestEntry};
use crate::score::QuantizerSpec;

pub struct PrepareOptions {
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Training-set size; everything else is held out. Defaults to all but
    /// one twentieth (at least one utterance).
    pub n_train: Option<usize>,
    pub seed: u64,
    pub lexicon_path: Option<PathBuf>,
    pub phoneme_dict_path: Option<PathBuf>,
}

#[derive(Debug)]
pub struct PrepareSummary {
    pub n_train: usize,
    pub n_eval: usize,
    pub n_parse_errors: usize,
    pub n_excluded: usize,
    pub energy_lo: f64,
    pub energy_hi: f64,
}

/// Frame-level analysis of one waveform under the run configuration.
pub fn extract_features(samples: &[f32], cfg: &RunConfig) -> Result<FrameFeatures> {
    let wave = Waveform::new(samples.to_vec(), cfg.stft.sample_rate)?;
    let spec = dsp::stft(&wave, &cfg.stft)?;
    let energy = dsp::frame_energy(&spec);
    let linear_spec = spec.magnitudes();
    let bank = dsp::mel_filterbank(
        &cfg.stft,
        &MelParams { n_mels: cfg.mel.n_mels, fmin: cfg.mel.fmin, fmax: cfg.mel.fmax },
    );
    let mel_spec = dsp::mel_from_stft(&spec, &bank, cfg.mel.n_mels);
    let (lf0, voicing) = dsp::extract_f0(
        &wave,
        &cfg.stft,
        &F0Params {
            fmin: cfg.f0.fmin,
            fmax: cfg.f0.fmax,
            threshold: cfg.f0.threshold,
            ..F0Params::default()
        },
    )?;
    let features = FrameFeatures {
        n_frames: spec.n_frames,
        n_bins: spec.n_bins,
        n_mels: cfg.mel.n_mels,
        linear_spec,
        mel_spec,
        energy,
        lf0,
        voicing,
    };
    features.validate()?;
    Ok(features)
}

/// Run the full preparation pipeline. On success the output directory holds
/// `manifest.train.jsonl`, `manifest.eval.jsonl`, `vocab.json`, `lexicon.txt`,
/// `config.toml`, resampled `wavs/` and the feature cache; the passed config
/// comes back with the corpus-fitted energy quantizer.
pub fn prepare_corpus(cfg: &mut RunConfig, opts: &PrepareOptions) -> Result<PrepareSummary> {
    cfg.validate()?;
    let transcription_path = opts.corpus_dir.join("transcriptions.txt");
    let text = std::fs::read_to_string(&transcription_path)
        .map_err(|e| Error::io(&transcription_path, e))?;

    let mut dict = PhonemeDict::standard();
    if let Some(path) = &opts.phoneme_dict_path {
        dict.load_overrides(path)?;
    }

    let mut utterances = Vec::new();
    let mut n_parse_errors = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_transcription(line, &dict) {
            Ok(utt) => utterances.push(utt),
            Err(err) => {
                n_parse_errors += 1;
                eprintln!("skip line {}: {err}", lineno + 1);
            }
        }
    }
    if utterances.is_empty() {
        return Err(Error::parse(&transcription_path, "no parsable utterances"));
    }

    let wav_out = opts.out_dir.join("wavs");
    std::fs::create_dir_all(&wav_out).map_err(|e| Error::io(&wav_out, e))?;
    let cache = FeatureCache::create(opts.out_dir.join("features"), &cfg.feature_hash()[..16])?;

    let slack_sec = cfg.duration_slack_hops * cfg.stft.hop_length as f64 / cfg.stft.sample_rate as f64;
    let processed: Vec<Result<Option<(Utterance, usize, Vec<f32>)>>> = utterances
        .into_par_iter()
        .map(|mut utt| -> Result<Option<(Utterance, usize, Vec<f32>)>> {
            let src = opts.corpus_dir.join("wavs").join(format!("{}.wav", utt.id));
            let wave = ingest_audio(&src, cfg.stft.sample_rate)?;
            let mismatch = (wave.duration_sec() - utt.total_note_duration_sec()).abs();
            if mismatch > slack_sec {
                eprintln!(
                    "exclude {}: audio {}s vs annotation {}s (slack {slack_sec:.4}s)",
                    utt.id,
                    wave.duration_sec(),
                    utt.total_note_duration_sec()
                );
                return Ok(None);
            }
            write_wav(&wav_out.join(format!("{}.wav", utt.id)), &wave)?;
            let features = extract_features(&wave.samples, cfg)?;
            cache.store(&utt.id, &features)?;
            let train_energies: Vec<f32> = features.energy.clone();
            utt.audio_path = format!("wavs/{}.wav", utt.id);
            Ok(Some((utt, features.n_frames, train_energies)))
        })
        .collect();

    let mut kept = Vec::new();
    let mut n_excluded = 0usize;
    for item in processed {
        match item? {
            Some(entry) => kept.push(entry),
            None => n_excluded += 1,
        }
    }
    if kept.is_empty() {
        return Err(Error::InsufficientData { requested: 1, available: 0 });
    }

    let ids: Vec<String> = kept.iter().map(|(u, _, _)| u.id.clone()).collect();
    let n_train = opts
        .n_train
        .unwrap_or_else(|| ids.len().saturating_sub((ids.len() / 20).max(1)));
    let split = split_dataset(&ids, n_train, opts.seed)?;

    // energy quantizer range from the training split's log energies
    let train_set: std::collections::HashSet<&String> = split.train.iter().collect();
    let mut log_energies: Vec<f64> = kept
        .iter()
        .filter(|(u, _, _)| train_set.contains(&u.id))
        .flat_map(|(_, _, energies)| energies.iter().map(|e| (e.max(1e-5) as f64).ln()))
        .collect();
    if log_energies.is_empty() {
        log_energies = kept
            .iter()
            .flat_map(|(_, _, e)| e.iter().map(|v| (v.max(1e-5) as f64).ln()))
            .collect();
    }
    log_energies.sort_by(|a, b| a.partial_cmp(b).expect("energies are finite"));
    let lo = percentile(&log_energies, 0.001);
    let hi = percentile(&log_energies, 0.999);
    let (lo, hi) = if hi - lo < 1e-3 { (lo - 0.5, lo + 0.5) } else { (lo, hi) };
    cfg.quantizers.energy = QuantizerSpec::new(cfg.model.n_energy_bins, lo, hi)?;

    let vocab = PhonemeVocab::from_utterances(kept.iter().map(|(u, _, _)| u));
    vocab.save(&opts.out_dir.join("vocab.json"))?;

    let lexicon = match &opts.lexicon_path {
        Some(path) => PinyinLexicon::load(path)?,
        None => {
            let mut lex = PinyinLexicon::bundled();
            let derived = PinyinLexicon::derive_from_corpus(kept.iter().map(|(u, _, _)| u));
            merge_lexicons(&mut lex, &derived);
            lex
        }
    };
    lexicon.save(&opts.out_dir.join("lexicon.txt"))?;
    if let Some(path) = &opts.phoneme_dict_path {
        std::fs::copy(path, opts.out_dir.join("phoneme_dict.txt"))
            .map_err(|e| Error::io(path, e))?;
    }

    let by_id: std::collections::HashMap<&String, &(Utterance, usize, Vec<f32>)> =
        kept.iter().map(|entry| (&entry.0.id, entry)).collect();
    let entries_of = |ids: &[String]| -> Vec<ManifestEntry> {
        ids.iter()
            .map(|id| {
                let (utt, n_frames, _) = by_id[id];
                ManifestEntry::from_utterance(utt, *n_frames)
            })
            .collect()
    };
    write_manifest(&opts.out_dir.join("manifest.train.jsonl"), &entries_of(&split.train))?;
    write_manifest(&opts.out_dir.join("manifest.eval.jsonl"), &entries_of(&split.eval))?;
    cfg.save(&opts.out_dir.join("config.toml"))?;

    Ok(PrepareSummary {
        n_train: split.train.len(),
        n_eval: split.eval.len(),
        n_parse_errors,
        n_excluded,
        energy_lo: lo,
        energy_hi: hi,
    })
}

fn percentile(sorted: &[f64], fraction: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * fraction).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn merge_lexicons(base: &mut PinyinLexicon, extra: &PinyinLexicon) {
    // derived readings only fill gaps; explicit entries win
    for (ch, py) in extra.entries() {
        if base.readings(ch).is_none() {
            for reading in py {
                base.insert(ch, reading);
            }
        }
    }
}
