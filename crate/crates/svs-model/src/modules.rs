//! Shared network building blocks. Sequence tensors are [B, T, C] unless a
//! name says otherwise; masks are [B, T] with 1.0 on valid positions.

use candle_core::{DType, Device, Tensor, D};
use candle_nn::ops::softmax;
use candle_nn::{Embedding, Linear, Module};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::params::{Init, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub padding: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self { padding: 0, stride: 1, dilation: 1 }
    }
}

impl ConvSpec {
    pub fn same(kernel: usize) -> Self {
        Self { padding: kernel / 2, ..Self::default() }
    }
}

/// 1-D convolution done as im2col gather + matmul. The backend's native
/// conv1d miscomputes kernel gradients (its backward feeds transposed views
/// back into conv1d), so trainable convolutions route through gather/matmul
/// whose gradients are sound. Fixed-weight analysis convs can stay native.
pub struct Conv1d {
    weight: Tensor, // [out, in, k]
    bias: Tensor,   // [out]
    spec: ConvSpec,
}

impl Conv1d {
    pub fn new(weight: Tensor, bias: Tensor, spec: ConvSpec) -> Self {
        Self { weight, bias, spec }
    }

    /// x [B, C, T] -> [B, O, T'].
    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let x = x.contiguous()?;
        let (b, c, t) = x.dims3()?;
        let (o, _, k) = self.weight.dims3()?;
        let ConvSpec { padding, stride, dilation } = self.spec;
        let xp = if padding > 0 { x.pad_with_zeros(2, padding, padding)? } else { x.clone() };
        let t_pad = t + 2 * padding;
        let span = dilation * (k - 1) + 1;
        let t_out = (t_pad - span) / stride + 1;

        let cols = if k == 1 && stride == 1 {
            xp
        } else {
            let mut slices = Vec::with_capacity(k);
            for kk in 0..k {
                let idx: Vec<u32> =
                    (0..t_out).map(|tt| (tt * stride + kk * dilation) as u32).collect();
                let idx = Tensor::from_vec(idx, &[t_out], xp.device())?;
                slices.push(xp.index_select(&idx, 2)?);
            }
            Tensor::stack(&slices, 2)?.reshape((b, c * k, t_out))?
        };
        let w2 = self.weight.reshape((o, c * k))?;
        w2.broadcast_matmul(&cols)?
            .broadcast_add(&self.bias.reshape((1, o, 1))?)
    }
}

pub fn normal_vec(rng: &mut ChaCha20Rng, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(r * theta.cos());
        if out.len() < count {
            out.push(r * theta.sin());
        }
    }
    out
}

pub fn randn(shape: &[usize], rng: &mut ChaCha20Rng, device: &Device, dtype: DType) -> Result<Tensor> {
    let count: usize = shape.iter().product();
    let values = normal_vec(rng, count);
    Ok(Tensor::from_vec(values, shape, device)?.to_dtype(dtype)?)
}

/// Inverted dropout driven by our own stream; identity in eval mode.
pub fn dropout(x: &Tensor, p: f64, train: bool, rng: &mut ChaCha20Rng) -> Result<Tensor> {
    if !train || p <= 0.0 {
        return Ok(x.clone());
    }
    let count = x.elem_count();
    let scale = 1.0 / (1.0 - p);
    let mask: Vec<f32> = (0..count)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale as f32 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}

pub fn linear(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Linear> {
    let w = store.kaiming(format!("{name}.weight"), &[out_dim, in_dim])?;
    let b = store.var(format!("{name}.bias"), &[out_dim], Init::Zeros)?;
    Ok(Linear::new(w, Some(b)))
}

pub fn linear_zeroed(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Linear> {
    let w = store.var(format!("{name}.weight"), &[out_dim, in_dim], Init::Zeros)?;
    let b = store.var(format!("{name}.bias"), &[out_dim], Init::Zeros)?;
    Ok(Linear::new(w, Some(b)))
}

pub fn conv1d(
    store: &mut ParamStore,
    name: &str,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    spec: ConvSpec,
) -> Result<Conv1d> {
    let w = store.kaiming(format!("{name}.weight"), &[out_ch, in_ch, kernel])?;
    let b = store.var(format!("{name}.bias"), &[out_ch], Init::Zeros)?;
    Ok(Conv1d::new(w, b, spec))
}

pub fn conv1d_zeroed(
    store: &mut ParamStore,
    name: &str,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    spec: ConvSpec,
) -> Result<Conv1d> {
    let w = store.var(format!("{name}.weight"), &[out_ch, in_ch, kernel], Init::Zeros)?;
    let b = store.var(format!("{name}.bias"), &[out_ch], Init::Zeros)?;
    Ok(Conv1d::new(w, b, spec))
}

/// Layer norm over the last dim, built from primitive ops so every dtype
/// the backend can differentiate is usable.
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

pub fn layer_norm(store: &mut ParamStore, name: &str, dim: usize) -> Result<LayerNorm> {
    let w = store.var(format!("{name}.weight"), &[dim], Init::Ones)?;
    let b = store.var(format!("{name}.bias"), &[dim], Init::Zeros)?;
    Ok(LayerNorm { weight: w, bias: b, eps: 1e-5 })
}

pub fn embedding(store: &mut ParamStore, name: &str, n: usize, dim: usize) -> Result<Embedding> {
    let w = store.var(format!("{name}.weight"), &[n, dim], Init::Normal(0.02))?;
    Ok(Embedding::new(w, dim))
}

pub fn same_pad(kernel: usize) -> usize {
    kernel / 2
}

/// x [B,T,C] * mask [B,T].
pub fn apply_mask(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_mul(&mask.unsqueeze(2)?)?)
}

/// Sinusoidal position encoding [T, dim] in the tensor's dtype.
pub fn positional_encoding(t: usize, dim: usize, device: &Device, dtype: DType) -> Result<Tensor> {
    let mut values = Vec::with_capacity(t * dim);
    for pos in 0..t {
        for i in 0..dim {
            let exponent = (2 * (i / 2)) as f64 / dim as f64;
            let angle = pos as f64 / 10_000f64.powf(exponent);
            values.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Ok(Tensor::from_vec(values, &[t, dim], device)?.to_dtype(dtype)?)
}

pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: linear(store, &format!("{name}.q"), dim, dim)?,
            k: linear(store, &format!("{name}.k"), dim, dim)?,
            v: linear(store, &format!("{name}.v"), dim, dim)?,
            o: linear(store, &format!("{name}.o"), dim, dim)?,
            heads,
            head_dim: dim / heads,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let split = |proj: &Linear| -> Result<Tensor> {
            Ok(proj
                .forward(x)?
                .reshape((b, t, self.heads, self.head_dim))?
                .transpose(1, 2)?
                .contiguous()?)
        };
        let q = split(&self.q)?;
        let k = split(&self.k)?;
        let v = split(&self.v)?;

        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * scale)?;
        // additive key mask: padded keys get a large negative score
        let neg = ((mask.ones_like()? - mask)? * -1e9)?.reshape((b, 1, 1, t))?;
        let scores = scores.broadcast_add(&neg)?;
        let attn = softmax(&scores, 3)?;
        let ctx = attn
            .matmul(&v)?
            .transpose(1, 2)?
            .reshape((b, t, d))?;
        let out = self.o.forward(&ctx)?;
        apply_mask(&out, mask)
    }
}

/// Feed-forward Transformer block: self-attention plus a convolutional
/// feed-forward, each with residual, layer norm and dropout.
pub struct FftBlock {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ff1: Conv1d,
    ff2: Conv1d,
    norm2: LayerNorm,
    dropout_p: f64,
}

impl FftBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        filter: usize,
        kernel: usize,
        dropout_p: f64,
    ) -> Result<Self> {
        let cfg = ConvSpec::same(kernel);
        Ok(Self {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads)?,
            norm1: layer_norm(store, &format!("{name}.norm1"), dim)?,
            ff1: conv1d(store, &format!("{name}.ff1"), dim, filter, kernel, cfg)?,
            ff2: conv1d(store, &format!("{name}.ff2"), filter, dim, kernel, cfg)?,
            norm2: layer_norm(store, &format!("{name}.norm2"), dim)?,
            dropout_p,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor, train: bool, rng: &mut ChaCha20Rng) -> Result<Tensor> {
        let attn = self.attn.forward(x, mask)?;
        let attn = dropout(&attn, self.dropout_p, train, rng)?;
        let x = apply_mask(&self.norm1.forward(&(x + attn)?)?, mask)?;

        let h = x.transpose(1, 2)?.contiguous()?;
        let h = self.ff1.forward(&h)?.relu()?;
        let h = self.ff2.forward(&h)?.transpose(1, 2)?.contiguous()?;
        let h = dropout(&h, self.dropout_p, train, rng)?;
        apply_mask(&self.norm2.forward(&(x + h)?)?, mask)
    }
}

/// Output-head initialization: a small weight spread keeps early predictions
/// near `bias`, which anchors ratio-style targets at their natural resting
/// point and keeps variance heads from exploding exp() terms.
#[derive(Debug, Clone, Copy)]
pub struct HeadInit {
    pub std: f64,
    pub bias: f64,
}

impl Default for HeadInit {
    fn default() -> Self {
        Self { std: 0.05, bias: 0.0 }
    }
}

/// Stack of [conv -> relu -> layer norm -> dropout] layers plus a final
/// linear head, the variance-predictor family.
pub struct ConvPredictor {
    convs: Vec<Conv1d>,
    norms: Vec<LayerNorm>,
    head: Linear,
    dropout_p: f64,
}

impl ConvPredictor {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        filter: usize,
        layers: usize,
        kernel: usize,
        out_dim: usize,
        dropout_p: f64,
        head_init: HeadInit,
    ) -> Result<Self> {
        let cfg = ConvSpec::same(kernel);
        let mut convs = Vec::with_capacity(layers);
        let mut norms = Vec::with_capacity(layers);
        for l in 0..layers {
            let cin = if l == 0 { in_dim } else { filter };
            convs.push(conv1d(store, &format!("{name}.conv{l}"), cin, filter, kernel, cfg)?);
            norms.push(layer_norm(store, &format!("{name}.norm{l}"), filter)?);
        }
        let w = store.var(format!("{name}.head.weight"), &[out_dim, filter], Init::Normal(head_init.std))?;
        let b = store.var(format!("{name}.head.bias"), &[out_dim], Init::Const(head_init.bias))?;
        let head = Linear::new(w, Some(b));
        Ok(Self { convs, norms, head, dropout_p })
    }

    /// x [B,T,in] -> [B,T,out].
    pub fn forward(&self, x: &Tensor, mask: &Tensor, train: bool, rng: &mut ChaCha20Rng) -> Result<Tensor> {
        let mut h = x.clone();
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            let c = conv.forward(&h.transpose(1, 2)?.contiguous()?)?.relu()?;
            h = norm.forward(&c.transpose(1, 2)?.contiguous()?)?;
            h = dropout(&h, self.dropout_p, train, rng)?;
            h = apply_mask(&h, mask)?;
        }
        apply_mask(&self.head.forward(&h)?, mask)
    }
}

/// Per-item repeat indices for the length regulator.
pub fn repeat_indices(counts: &[u32]) -> Vec<u32> {
    let mut idx = Vec::with_capacity(counts.iter().sum::<u32>() as usize);
    for (i, c) in counts.iter().enumerate() {
        for _ in 0..*c {
            idx.push(i as u32);
        }
    }
    idx
}

/// Expand phoneme-level hidden states to frame level by repeating each
/// position `counts` times; items are padded to `max_frames`.
pub fn length_regulate(x: &Tensor, counts: &[Vec<u32>], max_frames: usize) -> Result<Tensor> {
    let (b, _, d) = x.dims3()?;
    let mut rows = Vec::with_capacity(b);
    for (i, item_counts) in counts.iter().enumerate() {
        let idx = repeat_indices(item_counts);
        let t = idx.len();
        let idx = Tensor::from_vec(idx, &[t], x.device())?;
        let item = x.narrow(0, i, 1)?.squeeze(0)?; // [P,d]
        let mut expanded = item.index_select(&idx, 0)?; // [t,d]
        if t < max_frames {
            expanded = expanded.pad_with_zeros(0, 0, max_frames - t)?;
        }
        rows.push(expanded.reshape((1, max_frames, d))?);
    }
    Ok(Tensor::cat(&rows, 0)?)
}

/// Mask tensor [B, max_len] from per-item lengths.
pub fn lengths_to_mask(lengths: &[usize], max_len: usize, device: &Device, dtype: DType) -> Result<Tensor> {
    let mut values = Vec::with_capacity(lengths.len() * max_len);
    for &len in lengths {
        for t in 0..max_len {
            values.push(if t < len { 1.0f32 } else { 0.0 });
        }
    }
    Ok(Tensor::from_vec(values, &[lengths.len(), max_len], device)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn store() -> ParamStore {
        ParamStore::new(3, &Device::Cpu, DType::F32)
    }

    #[test]
    fn fft_block_keeps_shape_and_respects_mask() {
        let mut s = store();
        let block = FftBlock::new(&mut s, "b", 8, 2, 16, 3, 0.0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let x = randn(&[2, 5, 8], &mut rng, &Device::Cpu, DType::F32).unwrap();
        let mask = lengths_to_mask(&[5, 3], 5, &Device::Cpu, DType::F32).unwrap();
        let y = block.forward(&x, &mask, false, &mut rng).unwrap();
        assert_eq!(y.dims(), &[2, 5, 8]);
        let padded = y.narrow(0, 1, 1).unwrap().narrow(1, 3, 2).unwrap();
        let max_abs = padded.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(max_abs, 0.0);
    }

    #[test]
    fn positional_encoding_makes_blocks_order_sensitive() {
        let mut s = store();
        let block = FftBlock::new(&mut s, "b", 8, 2, 16, 3, 0.0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = randn(&[1, 6, 8], &mut rng, &Device::Cpu, DType::F32).unwrap();
        let pe = positional_encoding(6, 8, &Device::Cpu, DType::F32).unwrap();
        let mask = lengths_to_mask(&[6], 6, &Device::Cpu, DType::F32).unwrap();

        let with_pe = block
            .forward(&x.broadcast_add(&pe).unwrap(), &mask, false, &mut rng)
            .unwrap();
        // reverse positions
        let rev_idx = Tensor::from_vec((0..6u32).rev().collect::<Vec<_>>(), &[6], &Device::Cpu).unwrap();
        let x_rev = x.index_select(&rev_idx, 1).unwrap();
        let with_pe_rev = block
            .forward(&x_rev.broadcast_add(&pe).unwrap(), &mask, false, &mut rng)
            .unwrap()
            .index_select(&rev_idx, 1)
            .unwrap();
        let diff = (with_pe - with_pe_rev)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(diff > 1e-4, "permutation left output unchanged");
    }

    #[test]
    fn length_regulator_repeats_and_pads() {
        let x = Tensor::from_vec(
            vec![1.0f32, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0],
            &[2, 2, 2],
            &Device::Cpu,
        )
        .unwrap();
        let counts = vec![vec![2u32, 1], vec![1, 1]];
        let out = length_regulate(&x, &counts, 3).unwrap();
        assert_eq!(out.dims(), &[2, 3, 2]);
        let item0 = out.narrow(0, 0, 1).unwrap().reshape((3, 2)).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(item0, vec![vec![1.0, 10.0], vec![1.0, 10.0], vec![2.0, 20.0]]);
        let item1 = out.narrow(0, 1, 1).unwrap().reshape((3, 2)).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(item1, vec![vec![3.0, 30.0], vec![4.0, 40.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn doubling_one_count_grows_length_by_that_amount() {
        let x = Tensor::from_vec(vec![1.0f32, 2.0, 3.0], &[1, 3, 1], &Device::Cpu).unwrap();
        let short = length_regulate(&x, &[vec![2, 3, 1]].to_vec(), 6).unwrap();
        let long = length_regulate(&x, &[vec![2, 6, 1]].to_vec(), 9).unwrap();
        assert_eq!(long.dims()[1] - short.dims()[1], 3);
    }

    #[test]
    fn seeded_dropout_reproduces() {
        let x = Tensor::ones(&[4, 5], DType::F32, &Device::Cpu).unwrap();
        let mut r1 = ChaCha20Rng::seed_from_u64(9);
        let mut r2 = ChaCha20Rng::seed_from_u64(9);
        let a = dropout(&x, 0.5, true, &mut r1).unwrap();
        let b = dropout(&x, 0.5, true, &mut r2).unwrap();
        assert_eq!(a.to_vec2::<f32>().unwrap(), b.to_vec2::<f32>().unwrap());
        let c = dropout(&x, 0.5, false, &mut r1).unwrap();
        assert_eq!(c.to_vec2::<f32>().unwrap(), x.to_vec2::<f32>().unwrap());
    }
}
