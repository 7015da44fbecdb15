//! Reusable verification harnesses: hand-built toy items consistent with the
//! toy run config, and the central-difference gradient checker the test
//! suites run against every loss term.

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use svs_core::config::RunConfig;
use svs_core::corpus::Utterance;
use svs_core::dsp::FrameFeatures;
use svs_core::lexicon::PhonemeVocab;
use svs_core::score::ScoreFeatures;

use crate::data::{make_batch, Batch, DataItem};
use crate::error::Result;
use crate::losses::{
    duration_loss_per_item, energy_loss_per_item, kl_loss_per_item, mel_loss_per_item,
    pitch_loss_per_item,
};
use crate::model::AcousticModel;

pub fn toy_vocab() -> PhonemeVocab {
    PhonemeVocab::from_symbols(["a", "i", "sh", "SP"].map(str::to_string))
}

/// Hand-built item consistent with the toy STFT (sr 240, wl 16, hop 4):
/// `n_phonemes` score positions spread over `n_frames` frames.
pub fn toy_item(id: &str, n_phonemes: usize, n_frames: usize, seed: u64) -> DataItem {
    assert!(n_phonemes >= 2 && n_frames >= n_phonemes);
    let mut lcg = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
    let mut next = move || {
        lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((lcg >> 32) as u32 as f32 / u32::MAX as f32) * 2.0 - 1.0
    };

    let base = n_frames / n_phonemes;
    let mut gt_frames = vec![base as u32; n_phonemes];
    gt_frames[n_phonemes - 1] += (n_frames - base * n_phonemes) as u32;

    let note_lf0 = 440f64.ln(); // inside the toy pitch quantizer range (3, 8)
    let score = ScoreFeatures {
        phoneme_ids: (0..n_phonemes).map(|i| 1 + (i % 3) as u32).collect(),
        note_pitch_ids: vec![69; n_phonemes],
        note_frame_counts: gt_frames.clone(),
        slur_ids: vec![0; n_phonemes],
        note_lf0: vec![note_lf0; n_phonemes],
    };

    let n_bins = 9;
    let n_mels = 4;
    let features = FrameFeatures {
        n_frames,
        n_bins,
        n_mels,
        linear_spec: (0..n_frames * n_bins).map(|_| next().abs() * 0.5).collect(),
        mel_spec: (0..n_frames * n_mels).map(|_| next() * 2.0 - 3.0).collect(),
        energy: (0..n_frames).map(|_| next().abs() * 2.0 + 0.1).collect(),
        lf0: (0..n_frames).map(|_| note_lf0 as f32 + next() * 0.05).collect(),
        voicing: vec![1; n_frames],
    };
    features.validate().expect("toy features are consistent");

    let samples: Vec<f32> = (0..n_frames * 4 + 12).map(|_| next() * 0.4).collect();

    let utterance = Utterance {
        id: id.to_string(),
        text: vec![],
        phonemes: (0..n_phonemes).map(|i| ["a", "i", "sh"][i % 3].to_string()).collect(),
        note_pitches: vec![69; n_phonemes],
        note_durations_sec: vec![0.1; n_phonemes],
        phoneme_durations_sec: vec![0.1; n_phonemes],
        slur_flags: vec![0; n_phonemes],
        audio_path: String::new(),
    };

    DataItem { id: id.to_string(), utterance, score, gt_frames, features, samples, words: None, plan: None }
}

/// Toy f64 model plus a two-item batch, the fixture every gradient check
/// runs on.
pub fn toy_setup_f64() -> Result<(AcousticModel, Batch)> {
    let mut cfg = RunConfig::toy();
    cfg.sem_variant = svs_core::config::SemVariant::Off;
    let vocab = toy_vocab();
    let model = AcousticModel::new(&cfg, &vocab, &Device::Cpu, DType::F64)?;
    let a = toy_item("a", 4, 16, 3);
    let b = toy_item("b", 3, 12, 5);
    let batch = make_batch(&[&a, &b], &cfg, &Device::Cpu, DType::F64)?;
    Ok((model, batch))
}

pub struct GradCheckOutcome {
    pub loss_name: &'static str,
    pub checked: usize,
    pub worst_rel: f64,
}

const H: f64 = 1e-5;

/// Deterministic scalar loss for a named term; the rng reseeds per call so
/// every perturbed evaluation sees identical noise.
fn eval_loss(model: &AcousticModel, batch: &Batch, which: &str) -> Result<Tensor> {
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let prior = model.prior_forward(batch, None, true, false, &mut rng)?;
    let out = match which {
        "pitch" => pitch_loss_per_item(&prior.pred_lf0_hat, &batch.gt_lf0, &batch.pitch_mask)?
            .mean_all()?,
        "energy" => energy_loss_per_item(
            prior.pred_log_energy.as_ref().expect("energy branch on"),
            &batch.gt_energy_log,
            &batch.frame_mask,
        )?
        .mean_all()?,
        "duration" => {
            duration_loss_per_item(&prior.pred_dur_ratio, &batch.dur_ratio_target, &batch.ph_mask)?
                .mean_all()?
        }
        "kl" => {
            let mask3 = model.frame_mask3(batch)?;
            let post = model.posterior.forward(&batch.linear_spec, &mask3, true, &mut rng)?;
            let cond = prior.frame_hidden.transpose(1, 2)?.contiguous()?;
            let (z_p, logdet) = model.flow.forward(&post.z, &cond, &mask3)?;
            kl_loss_per_item(
                &post.z,
                &post.mean,
                &post.logstd,
                &z_p,
                &prior.prior_mean,
                &prior.prior_logstd,
                &logdet,
                &mask3,
            )?
            .mean_all()?
        }
        "mel" => {
            let mask3 = model.frame_mask3(batch)?;
            let post = model.posterior.forward(&batch.linear_spec, &mask3, true, &mut rng)?;
            let seg = 4usize;
            let z = post.z.narrow(2, 0, seg)?;
            let lf0_rows: Vec<Vec<f32>> = batch
                .gt_lf0
                .narrow(1, 0, seg)?
                .to_dtype(DType::F32)?
                .to_vec2::<f32>()?;
            let excitation = crate::decoder::excitation_from_lf0(
                &lf0_rows,
                model.decoder.hop,
                model.cfg.stft.sample_rate,
                &mut rng,
                &model.device,
                model.dtype,
            )?;
            let y_hat = model.decoder.forward(&z, &excitation)?.squeeze(1)?;
            // shift the operating point off the log floor: the untrained
            // decoder is near-silent and the floor clamp is a kink central
            // differences cannot straddle
            let n = y_hat.dims2()?.1;
            let carrier: Vec<f64> = (0..n).map(|i| (i as f64 * 0.9).sin() * 0.5).collect();
            let carrier = Tensor::from_vec(carrier, &[1, n], y_hat.device())?.to_dtype(y_hat.dtype())?;
            let y_hat = y_hat.broadcast_add(&carrier)?;
            let y_ref = batch.waves.narrow(1, 0, seg * model.decoder.hop)?;
            let mel_hat = model.mel.mel(&y_hat)?;
            let mel_ref = model.mel.mel(&y_ref)?.detach();
            mel_loss_per_item(&mel_hat, &mel_ref)?.mean_all()?
        }
        other => panic!("unknown loss {other}"),
    };
    Ok(out)
}

fn set_flat(var: &Var, values: &[f64]) -> Result<()> {
    let t = Tensor::from_vec(values.to_vec(), var.as_tensor().dims(), var.as_tensor().device())?;
    var.set(&t)?;
    Ok(())
}

/// Central-difference verification of one loss term over parameters whose
/// names contain any of `needles`; errors if the worst relative disagreement
/// exceeds `rel_tol`.
pub fn gradient_check(
    model: &AcousticModel,
    batch: &Batch,
    loss_name: &'static str,
    needles: &[&str],
    rel_tol: f64,
) -> Result<GradCheckOutcome> {
    let loss = eval_loss(model, batch, loss_name)?;
    let grads = loss.backward()?;
    let mut checked = 0usize;
    let mut worst_rel = 0.0f64;
    for needle in needles {
        let vars: Vec<(String, Var)> = model
            .gen_store
            .named_vars()
            .iter()
            .filter(|(n, _)| n.contains(needle))
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect();
        assert!(!vars.is_empty(), "no parameters match {needle}");
        for (name, var) in vars.iter().take(2) {
            let grad = grads
                .get(var.as_tensor())
                .unwrap_or_else(|| panic!("{loss_name}: no gradient for {name}"));
            let flat_grad: Vec<f64> = grad.flatten_all()?.to_vec1()?;
            let original: Vec<f64> = var.as_tensor().flatten_all()?.to_vec1()?;
            let n = original.len();
            for pick in 0..3usize.min(n) {
                let idx = (pick * 131 + 7) % n;
                let h = H * original[idx].abs().max(1.0);

                let mut plus = original.clone();
                plus[idx] += h;
                set_flat(var, &plus)?;
                let l_plus: f64 = eval_loss(model, batch, loss_name)?
                    .to_dtype(DType::F64)?
                    .to_scalar()?;

                let mut minus = original.clone();
                minus[idx] -= h;
                set_flat(var, &minus)?;
                let l_minus: f64 = eval_loss(model, batch, loss_name)?
                    .to_dtype(DType::F64)?
                    .to_scalar()?;

                set_flat(var, &original)?;

                let numeric = (l_plus - l_minus) / (2.0 * h);
                let analytic = flat_grad[idx];
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                let rel = (numeric - analytic).abs() / denom;
                worst_rel = worst_rel.max(rel);
                assert!(
                    rel < rel_tol,
                    "{loss_name} {name}[{idx}]: analytic {analytic:.3e} vs numeric {numeric:.3e} (rel {rel:.3e})"
                );
                checked += 1;
            }
        }
    }
    Ok(GradCheckOutcome { loss_name, checked, worst_rel })
}

/// The parameter groups each loss term must move.
pub fn loss_parameter_needles(loss_name: &str) -> &'static [&'static str] {
    match loss_name {
        "pitch" => &["prior.pitch.conv", "prior.pitch.head"],
        "energy" => &["prior.energy.conv", "prior.energy.head"],
        "duration" => &["prior.duration.conv", "prior.duration.head"],
        "kl" => &["posterior.pre", "flow.layer0.out", "prior.frame_prior.conv0"],
        "mel" => &["decoder.pre", "decoder.up0", "decoder.post"],
        other => panic!("unknown loss {other}"),
    }
}
