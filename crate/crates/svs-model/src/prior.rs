//! Prior encoder: summed score embeddings through FFT blocks, duration
//! prediction and length regulation, then the singing adaptor. The pitch
//! predictor outputs the ratio of sung pitch to note pitch; the predicted
//! log-F0 is that ratio times the note log-F0, quantized into an embedding.
//! The energy predictor scores each frame in the log domain and is embedded
//! the same way. Both embeddings are summed onto the frame hidden sequence
//! before the frame prior network.

use candle_core::Tensor;
use candle_nn::{Embedding, Linear, Module};
use rand_chacha::ChaCha20Rng;

use svs_core::config::ModelDims;
use svs_core::score::QuantizerSpec;

use crate::error::{ModelError, Result};
use crate::modules::{
    apply_mask, embedding, length_regulate, linear, positional_encoding, ConvPredictor, FftBlock,
    HeadInit,
};
use crate::params::ParamStore;

/// Phoneme-level score tensors.
pub struct ScoreBatch {
    pub phoneme_ids: Tensor,
    pub note_pitch_ids: Tensor,
    pub slur_ids: Tensor,
    /// [B, P, 1] log1p of the per-phoneme note frame count.
    pub log_note_frames: Tensor,
    pub ph_mask: Tensor,
}

pub struct FrameInputs<'a> {
    /// Frames per phoneme used for length regulation.
    pub frame_counts: &'a [Vec<u32>],
    pub max_frames: usize,
    pub frame_mask: &'a Tensor,
    /// Note log-F0 repeated over each phoneme's frames, 0 at rests.
    pub note_lf0_frames: &'a Tensor,
    /// Ground-truth values for the adaptor embeddings while teacher forcing.
    pub teacher_lf0: Option<&'a Tensor>,
    pub teacher_energy: Option<&'a Tensor>,
}

pub struct PriorInputs<'a> {
    pub score: &'a ScoreBatch,
    /// Encoded lyric semantics, added to the phoneme hidden states.
    pub sem_hidden: Option<&'a Tensor>,
    pub frames: FrameInputs<'a>,
}

pub struct PriorOutputs {
    pub phoneme_hidden: Tensor,
    /// Frame hidden sequence after the adaptor additions.
    pub frame_hidden: Tensor,
    /// [B, P] predicted phoneme-to-note duration ratio.
    pub pred_dur_ratio: Tensor,
    /// [B, T] predicted pitch ratio r.
    pub pred_ratio: Tensor,
    /// [B, T] r times note log-F0.
    pub pred_lf0_hat: Tensor,
    /// [B, T] predicted log energy; absent when the energy branch is off.
    pub pred_log_energy: Option<Tensor>,
    pub prior_mean: Tensor,
    pub prior_logstd: Tensor,
}

pub struct PriorEncoder {
    phoneme_emb: Embedding,
    note_pitch_emb: Embedding,
    slur_emb: Embedding,
    dur_proj: Linear,
    blocks: Vec<FftBlock>,
    duration_pred: ConvPredictor,
    pitch_pred: ConvPredictor,
    energy_pred: Option<ConvPredictor>,
    pitch_bin_emb: Embedding,
    energy_bin_emb: Option<Embedding>,
    frame_prior: ConvPredictor,
    pitch_quantizer: QuantizerSpec,
    energy_quantizer: QuantizerSpec,
    hidden: usize,
    latent: usize,
}

impl PriorEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &ModelDims,
        vocab_size: usize,
        pitch_quantizer: QuantizerSpec,
        energy_quantizer: QuantizerSpec,
    ) -> Result<Self> {
        let d = dims.hidden_dim;
        let blocks = (0..dims.phoneme_encoder_blocks)
            .map(|i| {
                FftBlock::new(
                    store,
                    &format!("{name}.block{i}"),
                    d,
                    dims.attention_heads,
                    dims.ffn_filter,
                    dims.ffn_kernel,
                    dims.dropout,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let energy_pred = if dims.use_energy {
            Some(ConvPredictor::new(
                store,
                &format!("{name}.energy"),
                d,
                dims.predictor_filter,
                dims.energy_layers,
                dims.energy_kernel,
                1,
                dims.dropout,
                HeadInit::default(),
            )?)
        } else {
            None
        };
        let energy_bin_emb = if dims.use_energy {
            Some(embedding(store, &format!("{name}.energy_bins"), dims.n_energy_bins, d)?)
        } else {
            None
        };
        Ok(Self {
            phoneme_emb: embedding(store, &format!("{name}.phoneme"), vocab_size, d)?,
            note_pitch_emb: embedding(store, &format!("{name}.note_pitch"), 128, d)?,
            slur_emb: embedding(store, &format!("{name}.slur"), 2, d)?,
            dur_proj: linear(store, &format!("{name}.dur_proj"), 1, d)?,
            blocks,
            // ratio targets rest at 1: a phoneme tends to fill its note
            duration_pred: ConvPredictor::new(
                store,
                &format!("{name}.duration"),
                d,
                dims.predictor_filter,
                dims.duration_layers,
                dims.duration_kernel,
                1,
                dims.dropout,
                HeadInit { std: 0.05, bias: 1.0 },
            )?,
            pitch_pred: ConvPredictor::new(
                store,
                &format!("{name}.pitch"),
                d,
                dims.predictor_filter,
                dims.pitch_layers,
                dims.pitch_kernel,
                1,
                dims.dropout,
                HeadInit { std: 0.05, bias: 1.0 },
            )?,
            energy_pred,
            pitch_bin_emb: embedding(store, &format!("{name}.pitch_bins"), 1 + dims.n_pitch_bins, d)?,
            energy_bin_emb,
            frame_prior: ConvPredictor::new(
                store,
                &format!("{name}.frame_prior"),
                d,
                d,
                dims.frame_prior_layers,
                3,
                2 * dims.latent_dim,
                dims.dropout,
                HeadInit { std: 0.01, bias: 0.0 },
            )?,
            pitch_quantizer,
            energy_quantizer,
            hidden: d,
            latent: dims.latent_dim,
        })
    }

    /// Summed input embeddings -> FFT blocks (+ semantics) -> phoneme hidden.
    pub fn encode_phonemes(
        &self,
        score: &ScoreBatch,
        sem_hidden: Option<&Tensor>,
        train: bool,
        rng: &mut ChaCha20Rng,
    ) -> Result<Tensor> {
        let (b, p) = score.phoneme_ids.dims2()?;
        if p == 0 {
            return Err(ModelError::ShapeMismatch("empty phoneme sequence".into()));
        }
        let x = (self.phoneme_emb.forward(&score.phoneme_ids)?
            + self.note_pitch_emb.forward(&score.note_pitch_ids)?)?;
        let x = (x + self.slur_emb.forward(&score.slur_ids)?)?;
        let x = (x + self.dur_proj.forward(&score.log_note_frames)?)?;
        let mut x = match sem_hidden {
            Some(sem) => {
                let dims = sem.dims3()?;
                if dims.0 != b || dims.1 != p || dims.2 != self.hidden {
                    return Err(ModelError::ShapeMismatch(format!(
                        "semantic hidden {:?} does not match phoneme batch [{b}, {p}, {}]",
                        sem.dims(),
                        self.hidden
                    )));
                }
                (x + sem)?
            }
            None => x,
        };
        let pe = positional_encoding(p, self.hidden, x.device(), x.dtype())?;
        x = apply_mask(&x.broadcast_add(&pe)?, &score.ph_mask)?;
        for block in &self.blocks {
            x = block.forward(&x, &score.ph_mask, train, rng)?;
        }
        Ok(x)
    }

    pub fn predict_duration_ratio(
        &self,
        phoneme_hidden: &Tensor,
        ph_mask: &Tensor,
        train: bool,
        rng: &mut ChaCha20Rng,
    ) -> Result<Tensor> {
        // stop-gradient input: the duration loss trains only the predictor
        let out = self
            .duration_pred
            .forward(&phoneme_hidden.detach(), ph_mask, train, rng)?;
        Ok(out.squeeze(2)?)
    }

    /// Length-regulate, run the singing adaptor and the frame prior network.
    pub fn forward_frames(
        &self,
        phoneme_hidden: &Tensor,
        f: &FrameInputs,
        train: bool,
        rng: &mut ChaCha20Rng,
    ) -> Result<FrameOutputs> {
        let frame_hidden = length_regulate(phoneme_hidden, f.frame_counts, f.max_frames)?;
        let frame_hidden = apply_mask(&frame_hidden, f.frame_mask)?;

        // pitch ratio r and the Eq-form prediction LF0^ = r * note LF0
        let pred_ratio = self
            .pitch_pred
            .forward(&frame_hidden, f.frame_mask, train, rng)?
            .squeeze(2)?;
        let pred_lf0_hat = (&pred_ratio * f.note_lf0_frames)?;

        let pitch_values = f.teacher_lf0.unwrap_or(&pred_lf0_hat);
        let pitch_bins = quantize_with_rest(pitch_values, &self.pitch_quantizer)?;
        let mut adapted = (frame_hidden.clone() + self.pitch_bin_emb.forward(&pitch_bins)?)?;

        let pred_log_energy = match (&self.energy_pred, &self.energy_bin_emb) {
            (Some(pred), Some(emb)) => {
                let e = pred.forward(&frame_hidden, f.frame_mask, train, rng)?.squeeze(2)?;
                let energy_values = f.teacher_energy.unwrap_or(&e);
                let energy_bins = quantize_plain(energy_values, &self.energy_quantizer)?;
                adapted = (adapted + emb.forward(&energy_bins)?)?;
                Some(e)
            }
            _ => None,
        };
        let adapted = apply_mask(&adapted, f.frame_mask)?;

        let stats = self.frame_prior.forward(&adapted, f.frame_mask, train, rng)?;
        let stats = stats.transpose(1, 2)?.contiguous()?; // [B, 2L, T]
        let prior_mean = stats.narrow(1, 0, self.latent)?;
        let prior_logstd = stats.narrow(1, self.latent, self.latent)?;

        Ok(FrameOutputs {
            frame_hidden: adapted,
            pred_ratio,
            pred_lf0_hat,
            pred_log_energy,
            prior_mean,
            prior_logstd,
        })
    }

    pub fn forward(&self, inputs: &PriorInputs, train: bool, rng: &mut ChaCha20Rng) -> Result<PriorOutputs> {
        let phoneme_hidden = self.encode_phonemes(inputs.score, inputs.sem_hidden, train, rng)?;
        let pred_dur_ratio =
            self.predict_duration_ratio(&phoneme_hidden, &inputs.score.ph_mask, train, rng)?;
        let frames = self.forward_frames(&phoneme_hidden, &inputs.frames, train, rng)?;
        Ok(PriorOutputs {
            phoneme_hidden,
            frame_hidden: frames.frame_hidden,
            pred_dur_ratio,
            pred_ratio: frames.pred_ratio,
            pred_lf0_hat: frames.pred_lf0_hat,
            pred_log_energy: frames.pred_log_energy,
            prior_mean: frames.prior_mean,
            prior_logstd: frames.prior_logstd,
        })
    }
}

pub struct FrameOutputs {
    pub frame_hidden: Tensor,
    pub pred_ratio: Tensor,
    pub pred_lf0_hat: Tensor,
    pub pred_log_energy: Option<Tensor>,
    pub prior_mean: Tensor,
    pub prior_logstd: Tensor,
}

/// Quantize values [B, T] with bin 0 reserved for rests (value <= 0); voiced
/// values land in 1..=n_bins. The lookup table index is detached by nature.
pub fn quantize_with_rest(values: &Tensor, spec: &QuantizerSpec) -> Result<Tensor> {
    let rows = values.detach().to_dtype(candle_core::DType::F32)?.to_vec2::<f32>()?;
    let (b, t) = values.dims2()?;
    let mut ids = Vec::with_capacity(b * t);
    for row in rows {
        for v in row {
            ids.push(if v <= 0.0 { 0u32 } else { 1 + spec.quantize(v as f64) as u32 });
        }
    }
    Ok(Tensor::from_vec(ids, &[b, t], values.device())?)
}

pub fn quantize_plain(values: &Tensor, spec: &QuantizerSpec) -> Result<Tensor> {
    let rows = values.detach().to_dtype(candle_core::DType::F32)?.to_vec2::<f32>()?;
    let (b, t) = values.dims2()?;
    let mut ids = Vec::with_capacity(b * t);
    for row in rows {
        for v in row {
            ids.push(spec.quantize(v as f64) as u32);
        }
    }
    Ok(Tensor::from_vec(ids, &[b, t], values.device())?)
}
