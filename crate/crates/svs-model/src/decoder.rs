//! Waveform generator: latent frames plus a pitch-synchronous excitation in,
//! samples out. Upsampling is repeat + conv (the CPU backend cannot backprop
//! transposed convolutions), followed by dilated residual blocks.
//!
//! The excitation is a sample-rate sine following the frame log-F0 contour
//! (noise on unvoiced frames). Without it a small decoder trained for a few
//! thousand steps locks onto the frame-rate comb of the upsampling grid and
//! never produces the sung pitch; giving it the carrier reduces the task to
//! learning envelopes and timbre.

use candle_core::{DType, Device, Tensor};
use candle_nn::ops::leaky_relu;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::modules::{conv1d, Conv1d, ConvSpec};
use crate::params::{Init, ParamStore};

const LRELU_SLOPE: f64 = 0.1;
const VOICED_AMPLITUDE: f64 = 0.4;
const UNVOICED_AMPLITUDE: f64 = 0.03;

struct ResBlock {
    dilated: Vec<Conv1d>,
    plain: Vec<Conv1d>,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, channels: usize, kernel: usize, dilations: &[usize]) -> Result<Self> {
        let mut dilated = Vec::new();
        let mut plain = Vec::new();
        for (i, d) in dilations.iter().enumerate() {
            let pad = (kernel - 1) * d / 2;
            dilated.push(conv1d(
                store,
                &format!("{name}.dilated{i}"),
                channels,
                channels,
                kernel,
                ConvSpec { padding: pad, dilation: *d, ..Default::default() },
            )?);
            plain.push(conv1d(
                store,
                &format!("{name}.plain{i}"),
                channels,
                channels,
                kernel,
                ConvSpec::same(kernel),
            )?);
        }
        Ok(Self { dilated, plain })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (dilated, plain) in self.dilated.iter().zip(&self.plain) {
            let a = dilated.forward(&leaky_relu(&h, LRELU_SLOPE)?)?;
            let b = plain.forward(&leaky_relu(&a, LRELU_SLOPE)?)?;
            h = (h + b)?;
        }
        Ok(h)
    }
}

pub struct Decoder {
    pre: Conv1d,
    stages: Vec<(usize, Conv1d, ResBlock)>,
    post: Conv1d,
    pub hop: usize,
    /// Cumulative upsampling after each stage; used to pool the excitation
    /// down to every stage's rate.
    stage_rates: Vec<usize>,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        latent: usize,
        channels: usize,
        upsample: &[usize],
        res_kernel: usize,
        res_dilations: &[usize],
    ) -> Result<Self> {
        let hop: usize = upsample.iter().product();
        let pre = conv1d(
            store,
            &format!("{name}.pre"),
            latent,
            channels,
            7,
            ConvSpec { padding: 3, ..Default::default() },
        )?;
        let mut stages = Vec::new();
        let mut stage_rates = Vec::new();
        let mut ch = channels;
        let mut rate = 1usize;
        for (i, factor) in upsample.iter().enumerate() {
            rate *= factor;
            stage_rates.push(rate);
            let out_ch = (ch / 2).max(4);
            let kernel = 2 * factor + 1;
            // +1 input channel: the excitation at this stage's rate
            let conv = conv1d(
                store,
                &format!("{name}.up{i}"),
                ch + 1,
                out_ch,
                kernel,
                ConvSpec { padding: *factor, ..Default::default() },
            )?;
            let res = ResBlock::new(store, &format!("{name}.res{i}"), out_ch, res_kernel, res_dilations)?;
            stages.push((*factor, conv, res));
            ch = out_ch;
        }
        // a tight output projection keeps tanh in its linear region early on;
        // a railed output is a gradient dead zone the mel loss cannot escape
        let post_w = store.var(format!("{name}.post.weight"), &[1, ch + 1, 7], Init::Normal(0.01))?;
        let post_b = store.var(format!("{name}.post.bias"), &[1], Init::Zeros)?;
        let post = Conv1d::new(post_w, post_b, ConvSpec { padding: 3, ..Default::default() });
        Ok(Self { pre, stages, post, hop, stage_rates })
    }

    /// z [B, latent, T], excitation [B, 1, T*hop] -> waveform [B, 1, T*hop].
    pub fn forward(&self, z: &Tensor, excitation: &Tensor) -> Result<Tensor> {
        let t = z.dims3()?.2;
        let full = t * self.hop;
        let exc_len = excitation.dims3()?.2;
        if exc_len != full {
            return Err(crate::error::ModelError::ShapeMismatch(format!(
                "excitation has {exc_len} samples, decoder produces {full}"
            ))
            .into());
        }
        let mut h = self.pre.forward(z)?;
        for ((factor, conv, res), rate) in self.stages.iter().zip(&self.stage_rates) {
            h = repeat_upsample(&leaky_relu(&h, LRELU_SLOPE)?, *factor)?;
            let exc = pool_excitation(excitation, self.hop / rate)?;
            h = conv.forward(&Tensor::cat(&[&h, &exc], 1)?)?;
            h = res.forward(&h)?;
        }
        let out = self.post.forward(&Tensor::cat(&[&h, excitation], 1)?)?;
        Ok(out.tanh()?)
    }
}

/// Average-pool the excitation down by `factor` (identity when 1), a crude
/// anti-alias so early low-rate stages still see the carrier's beat.
fn pool_excitation(excitation: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(excitation.clone());
    }
    let (b, _, l) = excitation.dims3()?;
    Ok(excitation
        .reshape((b, 1, l / factor, factor))?
        .mean(3)?)
}

/// Repeat each time step `factor` times along the last dim of [B, C, T].
pub fn repeat_upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    let t = x.dims3()?.2;
    let mut idx = Vec::with_capacity(t * factor);
    for i in 0..t {
        for _ in 0..factor {
            idx.push(i as u32);
        }
    }
    let idx = Tensor::from_vec(idx, &[t * factor], x.device())?;
    Ok(x.index_select(&idx, 2)?)
}

/// Sample-rate sine following the per-frame log-F0 contour with phase
/// continuity; unvoiced frames carry low-level noise. Constant with respect
/// to the network parameters (a conditioning signal, not a gradient path).
pub fn excitation_from_lf0(
    lf0_frames: &[Vec<f32>],
    hop: usize,
    sample_rate: u32,
    rng: &mut ChaCha20Rng,
    device: &Device,
    dtype: DType,
) -> Result<Tensor> {
    let b = lf0_frames.len();
    let t = lf0_frames.first().map(|f| f.len()).unwrap_or(0);
    let total = t * hop;
    let mut values = Vec::with_capacity(b * total);
    for item in lf0_frames {
        let mut phase = 0.0f64;
        for &lf0 in item {
            if lf0 > 0.0 {
                let f0 = (lf0 as f64).exp();
                let step = 2.0 * std::f64::consts::PI * f0 / sample_rate as f64;
                for _ in 0..hop {
                    phase += step;
                    values.push((phase.sin() * VOICED_AMPLITUDE) as f32);
                }
            } else {
                for _ in 0..hop {
                    values.push((rng.random::<f32>() * 2.0 - 1.0) * UNVOICED_AMPLITUDE as f32);
                }
            }
        }
    }
    Ok(Tensor::from_vec(values, &[b, 1, total], device)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modules::randn;
    use rand::SeedableRng;

    #[test]
    fn output_length_is_frames_times_hop() {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(8, &dev, DType::F32);
        let dec = Decoder::new(&mut store, "dec", 4, 16, &[2, 2], 3, &[1, 2]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let z = randn(&[2, 4, 32], &mut rng, &dev, DType::F32).unwrap();
        let lf0 = vec![vec![6.0f32; 32], vec![0.0f32; 32]];
        let exc = excitation_from_lf0(&lf0, 4, 240, &mut rng, &dev, DType::F32).unwrap();
        let y = dec.forward(&z, &exc).unwrap();
        assert_eq!(y.dims(), &[2, 1, 128]);
        let finite = y.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(finite.is_finite() && finite <= 1.0);
    }

    #[test]
    fn excitation_length_mismatch_is_an_error() {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(8, &dev, DType::F32);
        let dec = Decoder::new(&mut store, "dec", 4, 16, &[2, 2], 3, &[1]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let z = randn(&[1, 4, 8], &mut rng, &dev, DType::F32).unwrap();
        let exc = Tensor::zeros((1, 1, 16), DType::F32, &dev).unwrap();
        assert!(dec.forward(&z, &exc).is_err());
    }

    #[test]
    fn excitation_tracks_the_contour() {
        let dev = Device::Cpu;
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        // 60 Hz at 240 Hz sample rate: period 4 samples
        let lf0 = vec![vec![60f32.ln(); 8]];
        let exc = excitation_from_lf0(&lf0, 4, 240, &mut rng, &dev, DType::F32).unwrap();
        let v: Vec<f32> = exc.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(v.len(), 32);
        for i in 0..(v.len() - 4) {
            assert!((v[i] - v[i + 4]).abs() < 1e-3, "period broken at {i}");
        }
        // unvoiced stays low-level noise
        let silent = excitation_from_lf0(&vec![vec![0.0f32; 4]], 4, 240, &mut rng, &dev, DType::F32).unwrap();
        let s: Vec<f32> = silent.flatten_all().unwrap().to_vec1().unwrap();
        assert!(s.iter().all(|x| x.abs() <= UNVOICED_AMPLITUDE as f32));
    }

    #[test]
    fn repeat_upsample_duplicates_frames() {
        let x = Tensor::from_vec(vec![1.0f32, 2.0, 3.0], &[1, 1, 3], &Device::Cpu).unwrap();
        let y = repeat_upsample(&x, 2).unwrap();
        assert_eq!(
            y.reshape(6).unwrap().to_vec1::<f32>().unwrap(),
            vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]
        );
    }
}
