//! The full acoustic model: prior encoder with the singing adaptor, semantic
//! encoder, posterior encoder, coupling flow, waveform decoder and the
//! discriminators, all built over two seeded parameter stores (generator and
//! discriminator sides).

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha20Rng;

use svs_core::config::{RunConfig, SemVariant};
use svs_core::lexicon::PhonemeVocab;

use crate::data::{Batch, SemBatch};
use crate::decoder::Decoder;
use crate::discriminator::MultiPeriodDiscriminator;
use crate::error::{ModelError, Result};
use crate::flow::CouplingFlow;
use crate::mel::MelAnalyzer;
use crate::params::ParamStore;
use crate::posterior::PosteriorEncoder;
use crate::prior::{FrameInputs, PriorEncoder, PriorInputs, PriorOutputs, ScoreBatch};
use crate::semantic_encoder::{expand_hidden, SemanticEncoder};

pub struct AcousticModel {
    pub cfg: RunConfig,
    pub vocab_size: usize,
    pub device: Device,
    pub dtype: DType,
    pub semantic: SemanticEncoder,
    pub prior: PriorEncoder,
    pub posterior: PosteriorEncoder,
    pub flow: CouplingFlow,
    pub decoder: Decoder,
    pub discriminator: MultiPeriodDiscriminator,
    pub mel: MelAnalyzer,
    pub gen_store: ParamStore,
    pub disc_store: ParamStore,
}

impl AcousticModel {
    pub fn new(cfg: &RunConfig, vocab: &PhonemeVocab, device: &Device, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let dims = &cfg.model;
        let mut gen_store = ParamStore::new(cfg.seed, device, dtype);
        let mut disc_store = ParamStore::new(cfg.seed ^ 0xD15C_0000, device, dtype);

        let semantic = SemanticEncoder::new(
            &mut gen_store,
            "semantic",
            dims.semantic_input_dim,
            dims.hidden_dim,
            dims.semantic_blocks,
            dims.attention_heads,
            dims.ffn_filter,
            dims.ffn_kernel,
            dims.dropout,
        )?;
        let prior = PriorEncoder::new(
            &mut gen_store,
            "prior",
            dims,
            vocab.len(),
            cfg.quantizers.pitch.clone(),
            cfg.quantizers.energy.clone(),
        )?;
        let posterior = PosteriorEncoder::new(
            &mut gen_store,
            "posterior",
            cfg.stft.n_bins(),
            dims.hidden_dim,
            dims.latent_dim,
            dims.posterior_layers,
            dims.posterior_kernel,
        )?;
        let flow = CouplingFlow::new(
            &mut gen_store,
            "flow",
            dims.flow_layers,
            dims.latent_dim,
            dims.hidden_dim,
            dims.flow_hidden,
        )?;
        let decoder = Decoder::new(
            &mut gen_store,
            "decoder",
            dims.latent_dim,
            dims.decoder_channels,
            &dims.decoder_upsample,
            dims.decoder_resblock_kernel,
            &dims.decoder_resblock_dilations,
        )?;
        let discriminator =
            MultiPeriodDiscriminator::new(&mut disc_store, "disc", &dims.discriminator_periods)?;
        let mel = MelAnalyzer::new(&cfg.stft, &cfg.mel, device, dtype)?;

        Ok(Self {
            cfg: cfg.clone(),
            vocab_size: vocab.len(),
            device: device.clone(),
            dtype,
            semantic,
            prior,
            posterior,
            flow,
            decoder,
            discriminator,
            mel,
            gen_store,
            disc_store,
        })
    }

    /// Phoneme-level semantic hidden states for the batch, per the configured
    /// variant. `None` with the semantics off (the baseline path: the prior
    /// then sees an all-zero addition).
    pub fn semantic_hidden(&self, batch: &Batch, train: bool, rng: &mut ChaCha20Rng) -> Result<Option<Tensor>> {
        match (&batch.sem, self.cfg.sem_variant) {
            (SemBatch::Off, _) => Ok(None),
            (SemBatch::Standard(phoneme_vectors), SemVariant::Standard) => {
                let hidden = self.semantic.forward(phoneme_vectors, &batch.ph_mask, train, rng)?;
                Ok(Some(hidden))
            }
            (SemBatch::Reversed { words, word_mask, source_idx, non_rest }, SemVariant::Reversed) => {
                let word_hidden = self.semantic.forward(words, word_mask, train, rng)?;
                let max_p = batch.ph_mask.dims2()?.1;
                let expanded = expand_hidden(&word_hidden, source_idx, non_rest, max_p)?;
                Ok(Some(expanded))
            }
            _ => Err(ModelError::ShapeMismatch(
                "batch semantic payload does not match the configured variant".into(),
            )),
        }
    }

    pub fn score_batch(&self, batch: &Batch) -> ScoreBatch {
        ScoreBatch {
            phoneme_ids: batch.phoneme_ids.clone(),
            note_pitch_ids: batch.note_pitch_ids.clone(),
            slur_ids: batch.slur_ids.clone(),
            log_note_frames: batch.log_note_frames.clone(),
            ph_mask: batch.ph_mask.clone(),
        }
    }

    /// Training-path prior forward with ground-truth length regulation.
    pub fn prior_forward(
        &self,
        batch: &Batch,
        sem_hidden: Option<&Tensor>,
        teacher_force: bool,
        train: bool,
        rng: &mut ChaCha20Rng,
    ) -> Result<PriorOutputs> {
        let score = self.score_batch(batch);
        let inputs = PriorInputs {
            score: &score,
            sem_hidden,
            frames: FrameInputs {
                frame_counts: &batch.gt_counts,
                max_frames: batch.max_frames,
                frame_mask: &batch.frame_mask,
                note_lf0_frames: &batch.note_lf0_frames,
                teacher_lf0: teacher_force.then_some(&batch.gt_lf0),
                teacher_energy: teacher_force.then_some(&batch.gt_energy_log),
            },
        };
        self.prior.forward(&inputs, train, rng)
    }

    pub fn frame_mask3(&self, batch: &Batch) -> Result<Tensor> {
        Ok(batch.frame_mask.unsqueeze(1)?)
    }
}
