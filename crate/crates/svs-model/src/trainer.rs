//! The optimization loop: two AdamW optimizers (generator and discriminator
//! sides), exponential learning-rate decay, teacher forcing for the adaptor
//! embeddings during warmup, windowed decoder training, per-step loss log
//! and periodic checkpoints. Every source of randomness is reseeded per step
//! from the run seed, so identical configs replay identical runs.

use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use svs_core::config::RunConfig;
use svs_core::lexicon::{PhonemeDict, PhonemeVocab, PinyinLexicon};
use svs_core::manifest::read_manifest;
use svs_core::semantic::load_provider;

use crate::data::{load_items, make_batch, Batch, DataItem};
use crate::error::{ModelError, Result};
use crate::losses::{
    discriminator_loss, duration_loss_per_item, energy_loss_per_item, feature_matching_loss,
    generator_adversarial_loss, kl_loss_per_item, mel_loss_per_item, pitch_loss_per_item, scalar,
    GeneratorTerms, LossReport,
};
use crate::model::AcousticModel;

pub struct TrainOptions {
    pub steps: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
}

/// Load the prepared-data directory's training split: vocab plus items.
pub fn load_data_dir(
    data_dir: &Path,
    cfg: &RunConfig,
) -> Result<(PhonemeVocab, Vec<DataItem>)> {
    let vocab = PhonemeVocab::load(&data_dir.join("vocab.json"))?;
    let entries = read_manifest(&data_dir.join("manifest.train.jsonl"))?;
    let items = load_data_dir_with(data_dir, cfg, &entries)?;
    Ok((vocab, items))
}

/// Load explicit manifest entries against a prepared-data directory, with
/// the lexicon/dictionary/provider the directory and config describe.
pub fn load_data_dir_with(
    data_dir: &Path,
    cfg: &RunConfig,
    entries: &[svs_core::manifest::ManifestEntry],
) -> Result<Vec<DataItem>> {
    let vocab = PhonemeVocab::load(&data_dir.join("vocab.json"))?;
    let mut dict = PhonemeDict::standard();
    let dict_path = data_dir.join("phoneme_dict.txt");
    if dict_path.is_file() {
        dict.load_overrides(&dict_path)?;
    }
    let lexicon_path = data_dir.join("lexicon.txt");
    let lexicon = if lexicon_path.is_file() {
        PinyinLexicon::load(&lexicon_path)?
    } else {
        PinyinLexicon::bundled()
    };

    let provider = load_provider(
        &cfg.provider.kind,
        cfg.provider.seed,
        cfg.provider.cache_dir.as_deref().map(Path::new),
    )?;
    load_items(data_dir, entries, cfg, &vocab, Some(provider.as_ref()), &lexicon, &dict)
}

/// Frame-sorted fixed batches; the step loop shuffles their order per epoch.
fn build_batches(items: &[DataItem], cfg: &RunConfig, model: &AcousticModel) -> Result<Vec<Batch>> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(items[i].n_frames()));
    let mut batches = Vec::new();
    for chunk in order.chunks(cfg.training.batch_size.max(1)) {
        let refs: Vec<&DataItem> = chunk.iter().map(|&i| &items[i]).collect();
        batches.push(make_batch(&refs, cfg, &model.device, model.dtype)?);
    }
    Ok(batches)
}

struct SliceSpec {
    starts: Vec<usize>,
    frames: usize,
}

fn choose_slices(batch: &Batch, segment_frames: usize, rng: &mut ChaCha20Rng) -> SliceSpec {
    let frames = batch
        .n_frames
        .iter()
        .map(|&t| t.min(segment_frames))
        .min()
        .unwrap_or(segment_frames)
        .max(1);
    let starts = batch
        .n_frames
        .iter()
        .map(|&t| if t > frames { rng.random_range(0..=(t - frames)) } else { 0 })
        .collect();
    SliceSpec { starts, frames }
}

fn slice_frames(x: &Tensor, spec: &SliceSpec) -> Result<Tensor> {
    // x [B, C, T] -> [B, C, seg] at per-item starts
    let b = x.dims3()?.0;
    let mut rows = Vec::with_capacity(b);
    for (i, &start) in spec.starts.iter().enumerate() {
        rows.push(x.narrow(0, i, 1)?.narrow(2, start, spec.frames)?);
    }
    Ok(Tensor::cat(&rows, 0)?)
}

fn slice_excitation(excitation: &Tensor, spec: &SliceSpec, hop: usize) -> Result<Tensor> {
    let b = excitation.dims3()?.0;
    let mut rows = Vec::with_capacity(b);
    for (i, &start) in spec.starts.iter().enumerate() {
        rows.push(excitation.narrow(0, i, 1)?.narrow(2, start * hop, spec.frames * hop)?);
    }
    Ok(Tensor::cat(&rows, 0)?)
}

fn slice_samples(waves: &Tensor, spec: &SliceSpec, hop: usize) -> Result<Tensor> {
    let b = waves.dims2()?.0;
    let mut rows = Vec::with_capacity(b);
    for (i, &start) in spec.starts.iter().enumerate() {
        rows.push(waves.narrow(0, i, 1)?.narrow(1, start * hop, spec.frames * hop)?);
    }
    Ok(Tensor::cat(&rows, 0)?)
}

pub struct StepOutcome {
    pub report: LossReport,
}

/// One optimization step over a prepared batch.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &AcousticModel,
    batch: &Batch,
    opt_g: &mut AdamW,
    opt_d: &mut AdamW,
    step: u64,
    lr: f64,
    rng: &mut ChaCha20Rng,
) -> Result<StepOutcome> {
    let cfg = &model.cfg;
    let teacher = step <= cfg.training.teacher_force_steps;

    let sem_hidden = model.semantic_hidden(batch, true, rng)?;
    let prior = model.prior_forward(batch, sem_hidden.as_ref(), teacher, true, rng)?;

    let mask3 = model.frame_mask3(batch)?;
    let posterior = model.posterior.forward(&batch.linear_spec, &mask3, true, rng)?;
    let cond = prior.frame_hidden.transpose(1, 2)?.contiguous()?;
    let (z_p, logdet) = model.flow.forward(&posterior.z, &cond, &mask3)?;

    let kl = kl_loss_per_item(
        &posterior.z,
        &posterior.mean,
        &posterior.logstd,
        &z_p,
        &prior.prior_mean,
        &prior.prior_logstd,
        &logdet,
        &mask3,
    )?;

    let spec = choose_slices(batch, cfg.training.segment_frames, rng);
    let z_slice = slice_frames(&posterior.z, &spec)?;
    // pitch-synchronous excitation from the teacher contour during warmup,
    // from the adaptor's own prediction afterwards (never a gradient path)
    let lf0_source = if teacher { batch.gt_lf0.clone() } else { prior.pred_lf0_hat.detach() };
    let lf0_rows: Vec<Vec<f32>> = lf0_source
        .to_dtype(candle_core::DType::F32)?
        .to_vec2::<f32>()?;
    let excitation = crate::decoder::excitation_from_lf0(
        &lf0_rows,
        model.decoder.hop,
        cfg.stft.sample_rate,
        rng,
        &model.device,
        model.dtype,
    )?;
    let exc_slice = slice_excitation(&excitation, &spec, model.decoder.hop)?;
    let y_hat = model.decoder.forward(&z_slice, &exc_slice)?; // [B,1,seg*hop]
    let y_ref = slice_samples(&batch.waves, &spec, model.decoder.hop)?; // [B,seg*hop]

    let mel_hat = model.mel.mel(&y_hat.squeeze(1)?)?;
    let mel_ref = model.mel.mel(&y_ref)?.detach();
    let mel = mel_loss_per_item(&mel_hat, &mel_ref)?;

    let pitch = pitch_loss_per_item(&prior.pred_lf0_hat, &batch.gt_lf0, &batch.pitch_mask)?;
    let energy = prior
        .pred_log_energy
        .as_ref()
        .map(|e| energy_loss_per_item(e, &batch.gt_energy_log, &batch.frame_mask))
        .transpose()?;
    let duration = duration_loss_per_item(&prior.pred_dur_ratio, &batch.dur_ratio_target, &batch.ph_mask)?;

    // discriminator step on the detached generation
    let y_ref_3 = y_ref.unsqueeze(1)?;
    let real = model.discriminator.forward(&y_ref_3)?;
    let fake_detached = model.discriminator.forward(&y_hat.detach())?;
    let l_adv_d = discriminator_loss(&real, &fake_detached)?;
    let l_adv_d_value = scalar(&l_adv_d)?;
    if !l_adv_d_value.is_finite() {
        return Err(ModelError::NonFiniteLoss { step, batch: batch.ids.join(",") });
    }
    opt_d.backward_step(&l_adv_d)?;

    // generator step against the updated discriminator
    let real = model.discriminator.forward(&y_ref_3)?;
    let fake = model.discriminator.forward(&y_hat)?;
    let adv = generator_adversarial_loss(&fake)?;
    let fm = feature_matching_loss(&real, &fake)?;

    let terms = GeneratorTerms {
        pitch: pitch.mean_all()?,
        energy: energy.as_ref().map(|e| e.mean_all()).transpose()?,
        duration: duration.mean_all()?,
        kl: kl.mean_all()?,
        mel: mel.mean_all()?,
        adversarial: adv,
        feature_matching: fm,
    };
    let total_g = terms.total(&cfg.loss_weights)?;

    let report = LossReport {
        step,
        lr,
        l_pitch: scalar(&terms.pitch)?,
        l_energy: terms.energy.as_ref().map(scalar).transpose()?.unwrap_or(0.0),
        l_duration: scalar(&terms.duration)?,
        l_kl: scalar(&terms.kl)?,
        l_mel: scalar(&terms.mel)?,
        l_adv_g: scalar(&terms.adversarial)?,
        l_adv_d: l_adv_d_value,
        l_fm: scalar(&terms.feature_matching)?,
        total_g: scalar(&total_g)?,
        total_d: l_adv_d_value,
    };
    if !report.is_finite() {
        return Err(ModelError::NonFiniteLoss { step, batch: batch.ids.join(",") });
    }
    opt_g.backward_step(&total_g)?;

    Ok(StepOutcome { report })
}

/// Full training run; returns every step's loss report (also written as
/// line-delimited JSON under the output directory).
pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> Result<Vec<LossReport>> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out_dir)
        .map_err(|e| ModelError::CheckpointWriteFailure(e.to_string()))?;
    let (vocab, items) = load_data_dir(&opts.data_dir, cfg)?;
    if items.is_empty() {
        return Err(ModelError::ShapeMismatch("no training items in the manifest".into()));
    }

    let mut model = AcousticModel::new(cfg, &vocab, &candle_core::Device::Cpu, DType::F32)?;
    let mut start_step = 0u64;
    if let Some(resume) = &opts.resume {
        start_step = crate::checkpoint::load(&mut model, &vocab, resume)?;
    }

    let batches = build_batches(&items, cfg, &model)?;
    let batches_per_epoch = batches.len() as u64;

    let adam = |lr: f64| ParamsAdamW {
        lr,
        beta1: cfg.optimizer.beta1,
        beta2: cfg.optimizer.beta2,
        eps: cfg.optimizer.epsilon,
        weight_decay: cfg.optimizer.weight_decay,
    };
    let mut opt_g = AdamW::new(model.gen_store.all_vars(), adam(cfg.optimizer.lr0))?;
    let mut opt_d = AdamW::new(model.disc_store.all_vars(), adam(cfg.optimizer.lr0))?;

    let log_path = opts.out_dir.join("loss_log.jsonl");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(|e| ModelError::CheckpointWriteFailure(e.to_string()))?,
    );

    let mut reports = Vec::with_capacity(opts.steps as usize);
    let mut batch_order: Vec<usize> = (0..batches.len()).collect();
    let mut current_epoch = u64::MAX;

    for step in (start_step + 1)..=(start_step + opts.steps) {
        let epoch = (step - 1) / batches_per_epoch;
        if epoch != current_epoch {
            current_epoch = epoch;
            let mut order_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ (epoch.wrapping_mul(0x9E37_79B9)));
            fisher_yates(&mut batch_order, &mut order_rng);
        }
        let lr_exponent = if cfg.optimizer.decay_per_step { step - 1 } else { epoch };
        let lr = cfg.optimizer.lr0 * cfg.optimizer.decay.powi(lr_exponent as i32);
        opt_g.set_learning_rate(lr);
        opt_d.set_learning_rate(lr);

        let batch = &batches[batch_order[((step - 1) % batches_per_epoch) as usize]];
        let mut step_rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(step.wrapping_mul(0x5851_F42D)));
        let outcome = train_step(&model, batch, &mut opt_g, &mut opt_d, step, lr, &mut step_rng)?;

        let line = serde_json::to_string(&outcome.report).expect("loss report serializes");
        writeln!(log, "{line}").map_err(|e| ModelError::CheckpointWriteFailure(e.to_string()))?;
        if step % cfg.training.log_every == 0 || step == start_step + opts.steps {
            log.flush().map_err(|e| ModelError::CheckpointWriteFailure(e.to_string()))?;
        }
        reports.push(outcome.report);

        if step % cfg.training.checkpoint_every == 0 {
            crate::checkpoint::save(&model, &vocab, step, &opts.out_dir.join(format!("ckpt_{step}.safetensors")))?;
        }
    }
    log.flush().map_err(|e| ModelError::CheckpointWriteFailure(e.to_string()))?;
    crate::checkpoint::save(
        &model,
        &vocab,
        start_step + opts.steps,
        &opts.out_dir.join("model.safetensors"),
    )?;
    Ok(reports)
}

fn fisher_yates(order: &mut [usize], rng: &mut ChaCha20Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}
