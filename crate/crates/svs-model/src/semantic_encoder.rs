//! Text encoder over the contextual lyric embeddings: an input projection to
//! the model width, position encoding, then a stack of FFT blocks.
//!
//! In the standard variant the word vectors are upsampled to phoneme level
//! first and the encoder runs on the phoneme-length sequence; the reversed
//! variant encodes the word-level sequence and upsamples the encoded states.

use candle_core::Tensor;
use candle_nn::{Linear, Module};
use rand_chacha::ChaCha20Rng;

use crate::error::{ModelError, Result};
use crate::modules::{apply_mask, linear, positional_encoding, FftBlock};
use crate::params::ParamStore;

pub struct SemanticEncoder {
    input_proj: Linear,
    blocks: Vec<FftBlock>,
    input_dim: usize,
    hidden: usize,
}

impl SemanticEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        n_blocks: usize,
        heads: usize,
        filter: usize,
        kernel: usize,
        dropout: f64,
    ) -> Result<Self> {
        let input_proj = linear(store, &format!("{name}.proj"), input_dim, hidden)?;
        let blocks = (0..n_blocks)
            .map(|i| FftBlock::new(store, &format!("{name}.block{i}"), hidden, heads, filter, kernel, dropout))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { input_proj, blocks, input_dim, hidden })
    }

    /// x [B, T, input_dim] -> [B, T, hidden]; length is preserved.
    pub fn forward(&self, x: &Tensor, mask: &Tensor, train: bool, rng: &mut ChaCha20Rng) -> Result<Tensor> {
        let (_, t, d) = x.dims3()?;
        if t == 0 || d != self.input_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "semantic encoder expects non-empty input of dim {}, got length {t} dim {d}",
                self.input_dim
            )));
        }
        let h = self.input_proj.forward(x)?;
        let pe = positional_encoding(t, self.hidden, x.device(), x.dtype())?;
        let mut h = apply_mask(&h.broadcast_add(&pe)?, mask)?;
        for block in &self.blocks {
            h = block.forward(&h, mask, train, rng)?;
        }
        Ok(h)
    }
}

/// Upsample encoded word states to phoneme level inside the graph:
/// `source_idx` [B, P] picks the source word per position, `non_rest`
/// [B, P] zeroes SP/AP positions.
pub fn expand_hidden(word_hidden: &Tensor, source_idx: &[Vec<u32>], non_rest: &Tensor, max_len: usize) -> Result<Tensor> {
    let (b, _, d) = word_hidden.dims3()?;
    let mut rows = Vec::with_capacity(b);
    for (i, idx) in source_idx.iter().enumerate() {
        let t = idx.len();
        let idx_t = Tensor::from_vec(idx.clone(), &[t], word_hidden.device())?;
        let item = word_hidden.narrow(0, i, 1)?.squeeze(0)?;
        let mut expanded = item.index_select(&idx_t, 0)?;
        if t < max_len {
            expanded = expanded.pad_with_zeros(0, 0, max_len - t)?;
        }
        rows.push(expanded.reshape((1, max_len, d))?);
    }
    let expanded = Tensor::cat(&rows, 0)?;
    apply_mask(&expanded, non_rest).map_err(Into::into)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modules::{lengths_to_mask, randn};
    use candle_core::{DType, Device};
    use rand::SeedableRng;

    #[test]
    fn projects_to_hidden_and_keeps_length() {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(1, &dev, DType::F32);
        let enc = SemanticEncoder::new(&mut store, "sem", 12, 8, 2, 2, 16, 3, 0.0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x = randn(&[2, 7, 12], &mut rng, &dev, DType::F32).unwrap();
        let mask = lengths_to_mask(&[7, 4], 7, &dev, DType::F32).unwrap();
        let y = enc.forward(&x, &mask, false, &mut rng).unwrap();
        assert_eq!(y.dims(), &[2, 7, 8]);
    }

    #[test]
    fn empty_input_is_a_shape_error() {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(1, &dev, DType::F32);
        let enc = SemanticEncoder::new(&mut store, "sem", 12, 8, 1, 2, 16, 3, 0.0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x = Tensor::zeros((1, 0, 12), DType::F32, &dev).unwrap();
        let mask = Tensor::zeros((1, 0), DType::F32, &dev).unwrap();
        assert!(matches!(
            enc.forward(&x, &mask, false, &mut rng),
            Err(ModelError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn expand_hidden_replicates_and_zeroes_rests() {
        let dev = Device::Cpu;
        // one item, two words of dim 2
        let words = Tensor::from_vec(vec![1.0f32, 10.0, 2.0, 20.0], &[1, 2, 2], &dev).unwrap();
        let source = vec![vec![0u32, 0, 0, 0, 1]];
        let non_rest = Tensor::from_vec(vec![1.0f32, 1.0, 1.0, 0.0, 1.0], &[1, 5], &dev).unwrap();
        let out = expand_hidden(&words, &source, &non_rest, 5).unwrap();
        let flat = out.reshape((5, 2)).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(
            flat,
            vec![
                vec![1.0, 10.0],
                vec![1.0, 10.0],
                vec![1.0, 10.0],
                vec![0.0, 0.0],
                vec![2.0, 20.0]
            ]
        );
    }
}
