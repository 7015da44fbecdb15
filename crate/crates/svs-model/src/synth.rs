//! Inference: score + lyrics in, waveform out. Durations, pitch ratio and
//! energy all come from their predictors; the prior sample is pushed through
//! the inverse flow and decoded.

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use svs_core::config::SemVariant;
use svs_core::corpus::{Utterance, Waveform};
use svs_core::dsp::StftConfig;
use svs_core::lexicon::{PhonemeDict, PhonemeVocab, PinyinLexicon};
use svs_core::score::{build_score_features, ScoreFeatures};
use svs_core::semantic::{
    build_expansion_plan, embed_words, expand_embeddings, plan_position_sources, ExpansionPlan,
    SemanticProvider, WordEmbeddingSeq,
};

use crate::error::{ModelError, Result};
use crate::model::AcousticModel;
use crate::modules::{lengths_to_mask, randn};
use crate::prior::{FrameInputs, ScoreBatch};
use crate::semantic_encoder::expand_hidden;

pub struct SynthInput {
    pub id: String,
    pub score: ScoreFeatures,
    pub words: Option<WordEmbeddingSeq>,
    pub plan: Option<ExpansionPlan>,
}

impl SynthInput {
    pub fn from_utterance(
        utt: &Utterance,
        vocab: &PhonemeVocab,
        stft: &StftConfig,
        variant: SemVariant,
        provider: Option<&dyn SemanticProvider>,
        lexicon: &PinyinLexicon,
        dict: &PhonemeDict,
    ) -> Result<Self> {
        let score = build_score_features(utt, vocab, stft)?;
        let (words, plan) = match (variant, provider) {
            (SemVariant::Off, _) => (None, None),
            (_, None) => {
                return Err(ModelError::Core(svs_core::Error::ProviderUnavailable(
                    "semantic variant is on but no provider is configured".into(),
                )))
            }
            (_, Some(p)) => {
                let plan = build_expansion_plan(&utt.id, &utt.text, &utt.phonemes, lexicon, dict)?;
                let words = embed_words(p, &utt.text)?;
                (Some(words), Some(plan))
            }
        };
        Ok(Self { id: utt.id.clone(), score, words, plan })
    }
}

pub struct SynthesisResult {
    pub waveform: Waveform,
    /// Predicted frames per phoneme.
    pub pred_phoneme_frames: Vec<u32>,
    pub lf0_hat: Vec<f32>,
    pub log_energy: Option<Vec<f32>>,
}

pub fn synthesize(
    model: &AcousticModel,
    input: &SynthInput,
    noise_scale: f64,
    seed: u64,
) -> Result<SynthesisResult> {
    let device = &model.device;
    let dtype = model.dtype;
    let cfg = &model.cfg;
    let p = input.score.len();
    if p == 0 {
        return Err(ModelError::ShapeMismatch(format!("{}: empty score", input.id)));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let log_note_frames: Vec<f32> = input
        .score
        .note_frame_counts
        .iter()
        .map(|c| (*c as f32).ln_1p())
        .collect();
    let score = ScoreBatch {
        phoneme_ids: Tensor::from_vec(input.score.phoneme_ids.clone(), &[1, p], device)?,
        note_pitch_ids: Tensor::from_vec(
            input.score.note_pitch_ids.iter().map(|v| *v as u32).collect::<Vec<_>>(),
            &[1, p],
            device,
        )?,
        slur_ids: Tensor::from_vec(
            input.score.slur_ids.iter().map(|v| *v as u32).collect::<Vec<_>>(),
            &[1, p],
            device,
        )?,
        log_note_frames: Tensor::from_vec(log_note_frames, &[1, p, 1], device)?.to_dtype(dtype)?,
        ph_mask: lengths_to_mask(&[p], p, device, dtype)?,
    };

    let sem_hidden = semantic_hidden(model, input, &score, &mut rng)?;
    let phoneme_hidden = model.prior.encode_phonemes(&score, sem_hidden.as_ref(), false, &mut rng)?;
    let ratio = model
        .prior
        .predict_duration_ratio(&phoneme_hidden, &score.ph_mask, false, &mut rng)?
        .to_dtype(candle_core::DType::F32)?
        .to_vec2::<f32>()?;

    // half-up rounding of ratio * note frames, minimum one frame
    let counts: Vec<u32> = ratio[0]
        .iter()
        .zip(&input.score.note_frame_counts)
        .map(|(r, nf)| (((r.max(0.0) as f64) * *nf as f64 + 0.5).floor() as u32).max(1))
        .collect();
    let total_frames: usize = counts.iter().map(|c| *c as usize).sum();

    let mut note_lf0_frames = Vec::with_capacity(total_frames);
    for (j, count) in counts.iter().enumerate() {
        for _ in 0..*count {
            note_lf0_frames.push(input.score.note_lf0[j] as f32);
        }
    }
    let note_lf0_frames = Tensor::from_vec(note_lf0_frames, &[1, total_frames], device)?.to_dtype(dtype)?;
    let frame_mask = lengths_to_mask(&[total_frames], total_frames, device, dtype)?;

    let frames = model.prior.forward_frames(
        &phoneme_hidden,
        &FrameInputs {
            frame_counts: &[counts.clone()],
            max_frames: total_frames,
            frame_mask: &frame_mask,
            note_lf0_frames: &note_lf0_frames,
            teacher_lf0: None,
            teacher_energy: None,
        },
        false,
        &mut rng,
    )?;

    let mask3 = frame_mask.unsqueeze(1)?;
    let mut z_p = frames.prior_mean.clone();
    if noise_scale > 0.0 {
        let noise = randn(z_p.dims(), &mut rng, device, dtype)?;
        z_p = (z_p + (noise.mul(&frames.prior_logstd.exp()?)? * noise_scale)?)?;
    }
    let cond = frames.frame_hidden.transpose(1, 2)?.contiguous()?;
    let z = model.flow.inverse(&z_p, &cond, &mask3)?;
    let lf0_rows: Vec<Vec<f32>> = frames
        .pred_lf0_hat
        .to_dtype(candle_core::DType::F32)?
        .to_vec2::<f32>()?;
    let excitation = crate::decoder::excitation_from_lf0(
        &lf0_rows,
        model.decoder.hop,
        cfg.stft.sample_rate,
        &mut rng,
        &model.device,
        model.dtype,
    )?;
    let audio = model.decoder.forward(&z, &excitation)?;

    let samples: Vec<f32> = audio
        .reshape(total_frames * model.decoder.hop)?
        .to_dtype(candle_core::DType::F32)?
        .to_vec1::<f32>()?
        .into_iter()
        .map(|s| s.clamp(-1.0, 1.0))
        .collect();
    let waveform = Waveform::new(samples, cfg.stft.sample_rate)?;

    let lf0_hat = frames
        .pred_lf0_hat
        .to_dtype(candle_core::DType::F32)?
        .to_vec2::<f32>()?
        .remove(0);
    let log_energy = match &frames.pred_log_energy {
        Some(e) => Some(e.to_dtype(candle_core::DType::F32)?.to_vec2::<f32>()?.remove(0)),
        None => None,
    };

    Ok(SynthesisResult { waveform, pred_phoneme_frames: counts, lf0_hat, log_energy })
}

fn semantic_hidden(
    model: &AcousticModel,
    input: &SynthInput,
    score: &ScoreBatch,
    rng: &mut ChaCha20Rng,
) -> Result<Option<Tensor>> {
    let cfg = &model.cfg;
    let p = input.score.len();
    match cfg.sem_variant {
        SemVariant::Off => Ok(None),
        variant => {
            let (words, plan) = match (&input.words, &input.plan) {
                (Some(w), Some(pl)) => (w, pl),
                _ => {
                    return Err(ModelError::Core(svs_core::Error::ProviderUnavailable(format!(
                        "{}: semantic variant is on but the input has no embeddings",
                        input.id
                    ))))
                }
            };
            match variant {
                SemVariant::Standard => {
                    let expanded = expand_embeddings(words, plan)?;
                    let x = Tensor::from_vec(expanded, &[1, p, words.dim], &model.device)?
                        .to_dtype(model.dtype)?;
                    Ok(Some(model.semantic.forward(&x, &score.ph_mask, false, rng)?))
                }
                SemVariant::Reversed => {
                    let w = words.n_words();
                    let x = Tensor::from_vec(words.vectors.clone(), &[1, w, words.dim], &model.device)?
                        .to_dtype(model.dtype)?;
                    let word_mask = lengths_to_mask(&[w], w, &model.device, model.dtype)?;
                    let hidden = model.semantic.forward(&x, &word_mask, false, rng)?;
                    let (src, flags) = plan_position_sources(plan)?;
                    let non_rest = Tensor::from_vec(
                        flags.iter().map(|f| *f as f32).collect::<Vec<_>>(),
                        &[1, p],
                        &model.device,
                    )?
                    .to_dtype(model.dtype)?;
                    Ok(Some(expand_hidden(&hidden, &[src], &non_rest, p)?))
                }
                SemVariant::Off => unreachable!(),
            }
        }
    }
}
