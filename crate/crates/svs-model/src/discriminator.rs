//! Periodic waveform discriminators. Each sub-discriminator folds the signal
//! into `period` phase columns and runs a shared strided conv stack along
//! time (phase columns ride the batch dim, which matches (k, 1)-kernel 2-D
//! convolution). Period 1 degenerates to a plain multi-scale discriminator.

use candle_core::Tensor;
use candle_nn::ops::leaky_relu;

use crate::error::Result;
use crate::modules::{conv1d, Conv1d, ConvSpec};
use crate::params::ParamStore;

const LRELU_SLOPE: f64 = 0.1;
const CHANNELS: [usize; 3] = [16, 64, 128];
const KERNEL: usize = 5;
const STRIDE: usize = 3;

pub struct PeriodDiscriminator {
    period: usize,
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl PeriodDiscriminator {
    fn new(store: &mut ParamStore, name: &str, period: usize) -> Result<Self> {
        let mut convs = Vec::new();
        let mut in_ch = 1;
        for (i, out_ch) in CHANNELS.iter().enumerate() {
            convs.push(conv1d(
                store,
                &format!("{name}.conv{i}"),
                in_ch,
                *out_ch,
                KERNEL,
                ConvSpec { padding: KERNEL / 2, stride: STRIDE, ..Default::default() },
            )?);
            in_ch = *out_ch;
        }
        let post = conv1d(
            store,
            &format!("{name}.post"),
            in_ch,
            1,
            3,
            ConvSpec { padding: 1, ..Default::default() },
        )?;
        Ok(Self { period, convs, post })
    }

    /// x [B, 1, L] -> (flat scores [B, n], feature maps).
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (b, _, len) = x.dims3()?;
        let padded_len = len.div_ceil(self.period) * self.period;
        let x = if padded_len > len {
            x.pad_with_zeros(2, 0, padded_len - len)?
        } else {
            x.clone()
        };
        // [B,1,L] -> [B*period, 1, L/period]: phase columns share weights
        let t = padded_len / self.period;
        let mut h = x
            .reshape((b, t, self.period))?
            .transpose(1, 2)?
            .reshape((b * self.period, 1, t))?
            .contiguous()?;

        let mut fmaps = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            h = leaky_relu(&conv.forward(&h)?, LRELU_SLOPE)?;
            fmaps.push(h.clone());
        }
        let score = self.post.forward(&h)?; // [B*p, 1, T']
        let n = score.elem_count() / b;
        Ok((score.reshape((b, n))?, fmaps))
    }
}

pub struct DiscriminatorOutput {
    pub scores: Vec<Tensor>,
    pub feature_maps: Vec<Vec<Tensor>>,
}

pub struct MultiPeriodDiscriminator {
    subs: Vec<PeriodDiscriminator>,
}

impl MultiPeriodDiscriminator {
    pub fn new(store: &mut ParamStore, name: &str, periods: &[usize]) -> Result<Self> {
        let subs = periods
            .iter()
            .map(|p| PeriodDiscriminator::new(store, &format!("{name}.p{p}"), *p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { subs })
    }

    pub fn n_subs(&self) -> usize {
        self.subs.len()
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiscriminatorOutput> {
        let mut scores = Vec::with_capacity(self.subs.len());
        let mut feature_maps = Vec::with_capacity(self.subs.len());
        for sub in &self.subs {
            let (s, f) = sub.forward(x)?;
            scores.push(s);
            feature_maps.push(f);
        }
        Ok(DiscriminatorOutput { scores, feature_maps })
    }
}
