//! Loss terms. Per-item values come back as [B] tensors so padded batch
//! members can be checked against their unpadded runs; scalars are the batch
//! means. Pitch error is an L2 norm over voiced frames divided by the voiced
//! count; energy error is the RMS-normalized L2 norm.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use svs_core::config::LossWeights;

use crate::discriminator::DiscriminatorOutput;
use crate::error::Result;

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub lr: f64,
    pub l_pitch: f64,
    pub l_energy: f64,
    pub l_duration: f64,
    pub l_kl: f64,
    pub l_mel: f64,
    pub l_adv_g: f64,
    pub l_adv_d: f64,
    pub l_fm: f64,
    pub total_g: f64,
    pub total_d: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.l_pitch,
            self.l_energy,
            self.l_duration,
            self.l_kl,
            self.l_mel,
            self.l_adv_g,
            self.l_adv_d,
            self.l_fm,
            self.total_g,
            self.total_d,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// ||masked(lf0_wav - lf0_hat)||_2 / n_voiced, per item. `mask` must already
/// combine voicing, note presence and padding.
pub fn pitch_loss_per_item(lf0_hat: &Tensor, lf0_ref: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let diff = ((lf0_ref - lf0_hat)? * mask)?;
    let sq = diff.sqr()?.sum(1)?;
    let norm = (sq + NORM_EPS)?.sqrt()?;
    let count = mask.sum(1)?.clamp(1.0, f64::INFINITY)?;
    Ok((norm / count)?)
}

/// ||masked(E - E_hat)||_2 / sqrt(n), per item.
pub fn energy_loss_per_item(e_hat: &Tensor, e_ref: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let diff = ((e_ref - e_hat)? * mask)?;
    let sq = diff.sqr()?.sum(1)?;
    let norm = (sq + NORM_EPS)?.sqrt()?;
    let count = mask.sum(1)?.clamp(1.0, f64::INFINITY)?.sqrt()?;
    Ok((norm / count)?)
}

/// Masked mean squared error on the duration ratio, per item.
pub fn duration_loss_per_item(pred_ratio: &Tensor, target_ratio: &Tensor, ph_mask: &Tensor) -> Result<Tensor> {
    let diff = ((target_ratio - pred_ratio)? * ph_mask)?;
    let sq = diff.sqr()?.sum(1)?;
    let count = ph_mask.sum(1)?.clamp(1.0, f64::INFINITY)?;
    Ok((sq / count)?)
}

/// Monte-Carlo KL between the posterior and the flow-transformed prior,
/// averaged over valid latent elements, per item. `z_p` is the posterior
/// sample pushed through the flow; `logdet` is that flow's log-determinant.
#[allow(clippy::too_many_arguments)]
pub fn kl_loss_per_item(
    z_q: &Tensor,
    mean_q: &Tensor,
    logstd_q: &Tensor,
    z_p: &Tensor,
    mean_p: &Tensor,
    logstd_p: &Tensor,
    logdet: &Tensor,
    frame_mask: &Tensor, // [B,1,T]
) -> Result<Tensor> {
    let eps_q = ((z_q - mean_q)? * logstd_q.neg()?.exp()?)?;
    let log_q = (logstd_q.neg()? - (eps_q.sqr()? * 0.5)?)?.broadcast_mul(frame_mask)?;

    let eps_p = ((z_p - mean_p)? * logstd_p.neg()?.exp()?)?;
    let log_p = (logstd_p.neg()? - (eps_p.sqr()? * 0.5)?)?.broadcast_mul(frame_mask)?;

    let latent = z_q.dims3()?.1 as f64;
    let valid = (frame_mask.sum((1, 2))? * latent)?.clamp(1.0, f64::INFINITY)?;
    let total = ((log_q - log_p)?.sum((1, 2))? - logdet)?;
    Ok((total / valid)?)
}

/// Mean absolute log-mel distance per item; inputs are [B, mels, T].
pub fn mel_loss_per_item(mel_hat: &Tensor, mel_ref: &Tensor) -> Result<Tensor> {
    let diff = (mel_ref - mel_hat)?.abs()?;
    let (_, m, t) = diff.dims3()?;
    Ok((diff.sum((1, 2))? / (m * t) as f64)?)
}

/// Least-squares GAN discriminator loss: real toward 1, generated toward 0.
pub fn discriminator_loss(real: &DiscriminatorOutput, fake: &DiscriminatorOutput) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (r, f) in real.scores.iter().zip(&fake.scores) {
        let lr = (r - 1.0)?.sqr()?.mean_all()?;
        let lf = f.sqr()?.mean_all()?;
        let term = (lr + lf)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one sub-discriminator"))
}

/// Least-squares generator adversarial loss: generated toward 1.
pub fn generator_adversarial_loss(fake: &DiscriminatorOutput) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for f in &fake.scores {
        let term = (f - 1.0)?.sqr()?.mean_all()?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one sub-discriminator"))
}

/// L1 distance between real and generated intermediate feature maps.
pub fn feature_matching_loss(real: &DiscriminatorOutput, fake: &DiscriminatorOutput) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (rs, fs) in real.feature_maps.iter().zip(&fake.feature_maps) {
        for (r, f) in rs.iter().zip(fs) {
            let term = (f - r.detach())?.abs()?.mean_all()?;
            total = Some(match total {
                Some(t) => (t + term)?,
                None => term,
            });
        }
    }
    Ok(total.expect("feature maps present"))
}

pub struct GeneratorTerms {
    pub pitch: Tensor,
    pub energy: Option<Tensor>,
    pub duration: Tensor,
    pub kl: Tensor,
    pub mel: Tensor,
    pub adversarial: Tensor,
    pub feature_matching: Tensor,
}

impl GeneratorTerms {
    /// Weighted sum defining the generator objective.
    pub fn total(&self, w: &LossWeights) -> Result<Tensor> {
        let mut total = ((&self.mel * w.mel)? + (&self.kl * w.kl)?)?;
        total = (total + (&self.duration * w.duration)?)?;
        total = (total + (&self.pitch * w.pitch)?)?;
        if let Some(energy) = &self.energy {
            total = (total + (energy * w.energy)?)?;
        }
        total = (total + (&self.adversarial * w.adversarial)?)?;
        total = (total + (&self.feature_matching * w.feature_matching)?)?;
        Ok(total)
    }
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.mean_all()?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(rows: &[&[f32]]) -> Tensor {
        let b = rows.len();
        let n = rows[0].len();
        let flat: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_vec(flat, &[b, n], &Device::Cpu).unwrap()
    }

    #[test]
    fn pitch_loss_matches_hand_computation() {
        // residual (3, 4) over 2 voiced frames -> ||.|| / 2 = 2.5
        let lf0_ref = t(&[&[6.0, 6.0, 0.0]]);
        let lf0_hat = t(&[&[3.0, 2.0, 0.0]]);
        let mask = t(&[&[1.0, 1.0, 0.0]]);
        let loss = pitch_loss_per_item(&lf0_hat, &lf0_ref, &mask).unwrap();
        let v = loss.to_vec1::<f32>().unwrap()[0];
        assert!((v - 2.5).abs() < 1e-6, "{v}");
    }

    #[test]
    fn pitch_loss_zero_on_match_and_fully_masked() {
        let a = t(&[&[6.0, 6.1]]);
        let mask = t(&[&[1.0, 1.0]]);
        let zero = pitch_loss_per_item(&a, &a, &mask).unwrap().to_vec1::<f32>().unwrap()[0];
        assert!(zero.abs() < 1e-5);
        let unvoiced = t(&[&[0.0, 0.0]]);
        let masked = pitch_loss_per_item(&t(&[&[1.0, 2.0]]), &t(&[&[5.0, 6.0]]), &unvoiced)
            .unwrap()
            .to_vec1::<f32>()
            .unwrap()[0];
        assert!(masked.abs() < 1e-5);
    }

    #[test]
    fn energy_loss_constant_offset_is_the_offset() {
        let e = t(&[&[1.0, 2.0, 3.0, 4.0]]);
        let e_hat = t(&[&[1.5, 2.5, 3.5, 4.5]]);
        let mask = t(&[&[1.0, 1.0, 1.0, 1.0]]);
        let v = energy_loss_per_item(&e_hat, &e, &mask).unwrap().to_vec1::<f32>().unwrap()[0];
        assert!((v - 0.5).abs() < 1e-6, "{v}");
    }

    #[test]
    fn energy_loss_scalar_case() {
        let v = energy_loss_per_item(&t(&[&[3.0]]), &t(&[&[1.0]]), &t(&[&[1.0]]))
            .unwrap()
            .to_vec1::<f32>()
            .unwrap()[0];
        assert!((v - 2.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn duration_loss_is_masked_mse() {
        let pred = t(&[&[1.0, 0.5, 9.0]]);
        let target = t(&[&[1.0, 1.0, 9.0]]);
        let mask = t(&[&[1.0, 1.0, 0.0]]);
        let v = duration_loss_per_item(&pred, &target, &mask).unwrap().to_vec1::<f32>().unwrap()[0];
        assert!((v - 0.125).abs() < 1e-6, "{v}");
    }

    #[test]
    fn adversarial_equilibrium_is_the_analytic_constant() {
        // two sub-discriminators all emitting 0.5, identical feature maps
        let half = Tensor::full(0.5f32, (2, 6), &Device::Cpu).unwrap();
        let fmap = Tensor::full(1.25f32, (4, 3, 5), &Device::Cpu).unwrap();
        let out = || crate::discriminator::DiscriminatorOutput {
            scores: vec![half.clone(), half.clone()],
            feature_maps: vec![vec![fmap.clone()], vec![fmap.clone()]],
        };
        let (real, fake) = (out(), out());

        let adv_g = scalar(&generator_adversarial_loss(&fake).unwrap()).unwrap();
        assert!((adv_g - 0.5).abs() < 1e-6, "{adv_g}"); // 2 subs * (0.5-1)^2
        let adv_d = scalar(&discriminator_loss(&real, &fake).unwrap()).unwrap();
        assert!((adv_d - 1.0).abs() < 1e-6, "{adv_d}"); // 2 subs * ((0.5-1)^2 + 0.5^2)
        let fm = scalar(&feature_matching_loss(&real, &fake).unwrap()).unwrap();
        assert_eq!(fm, 0.0);

        // zero residuals leave exactly the adversarial terms in the total
        let zero = Tensor::zeros((), candle_core::DType::F32, &Device::Cpu).unwrap();
        let terms = GeneratorTerms {
            pitch: zero.clone(),
            energy: Some(zero.clone()),
            duration: zero.clone(),
            kl: zero.clone(),
            mel: zero.clone(),
            adversarial: generator_adversarial_loss(&fake).unwrap(),
            feature_matching: feature_matching_loss(&real, &fake).unwrap(),
        };
        let w = LossWeights::default();
        let total = scalar(&terms.total(&w).unwrap()).unwrap();
        assert!((total - w.adversarial * 0.5).abs() < 1e-6, "{total}");
    }

    #[test]
    fn weighted_total_is_linear_in_weights() {
        let one = Tensor::from_vec(vec![1.0f32], &[1], &Device::Cpu)
            .unwrap()
            .squeeze(0)
            .unwrap();
        let terms = GeneratorTerms {
            pitch: one.clone(),
            energy: Some(one.clone()),
            duration: one.clone(),
            kl: one.clone(),
            mel: one.clone(),
            adversarial: one.clone(),
            feature_matching: one.clone(),
        };
        let mut w = LossWeights::default();
        let base = scalar(&terms.total(&w).unwrap()).unwrap();
        w.pitch *= 2.0;
        let doubled = scalar(&terms.total(&w).unwrap()).unwrap();
        assert!((doubled - base - 1.0).abs() < 1e-9);
    }
}
