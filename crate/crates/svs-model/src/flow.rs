//! Affine coupling flow between the posterior latent and the prior space.
//! Couplings are identity at initialization (zeroed output projections) and
//! carry a tanh-bounded log-scale so the Jacobian term stays tame.

use candle_core::Tensor;

use crate::error::Result;
use crate::modules::{conv1d, conv1d_zeroed, Conv1d, ConvSpec};
use crate::params::ParamStore;

pub struct CouplingLayer {
    pre: Conv1d,
    mid: Conv1d,
    out: Conv1d,
    half: usize,
    /// Which half is transformed; alternates across layers so no channel
    /// permutation is ever applied to the data.
    flip: bool,
}

impl CouplingLayer {
    fn new(
        store: &mut ParamStore,
        name: &str,
        latent: usize,
        cond_dim: usize,
        hidden: usize,
        flip: bool,
    ) -> Result<Self> {
        let half = latent / 2;
        let cfg = ConvSpec::same(3);
        Ok(Self {
            pre: conv1d(store, &format!("{name}.pre"), half + cond_dim, hidden, 3, cfg)?,
            mid: conv1d(store, &format!("{name}.mid"), hidden, hidden, 3, cfg)?,
            out: conv1d_zeroed(store, &format!("{name}.out"), hidden, latent, 3, cfg)?,
            half,
            flip,
        })
    }

    fn split(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let first = x.narrow(1, 0, self.half)?;
        let second = x.narrow(1, self.half, self.half)?;
        Ok(if self.flip { (second, first) } else { (first, second) })
    }

    fn join(&self, kept: &Tensor, changed: &Tensor) -> Result<Tensor> {
        Ok(if self.flip {
            Tensor::cat(&[changed, kept], 1)?
        } else {
            Tensor::cat(&[kept, changed], 1)?
        })
    }

    /// Shift and log-scale for the transformed half, [B, half, T] each.
    fn stats(&self, za: &Tensor, cond: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let h = Tensor::cat(&[za, cond], 1)?;
        let h = self.pre.forward(&h)?.relu()?.broadcast_mul(mask)?;
        let h = self.mid.forward(&h)?.relu()?.broadcast_mul(mask)?;
        let stats = self.out.forward(&h)?.broadcast_mul(mask)?;
        let shift = stats.narrow(1, 0, self.half)?;
        let logscale = stats.narrow(1, self.half, self.half)?.tanh()?;
        Ok((shift, logscale))
    }
}

pub struct CouplingFlow {
    layers: Vec<CouplingLayer>,
}

impl CouplingFlow {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n_layers: usize,
        latent: usize,
        cond_dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|l| {
                CouplingLayer::new(store, &format!("{name}.layer{l}"), latent, cond_dim, hidden, l % 2 == 1)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    /// z [B,latent,T], cond [B,cond_dim,T], mask [B,1,T] -> (u, logdet [B]).
    pub fn forward(&self, z: &Tensor, cond: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut x = z.clone();
        let (b, _, _) = z.dims3()?;
        let mut logdet = Tensor::zeros(b, z.dtype(), z.device())?;
        for layer in &self.layers {
            let (kept, changed) = layer.split(&x)?;
            let (shift, logscale) = layer.stats(&kept, cond, mask)?;
            let changed = changed
                .broadcast_sub(&shift.broadcast_mul(mask)?)?
                .broadcast_mul(&logscale.neg()?.exp()?)?
                .broadcast_mul(mask)?;
            logdet = (logdet + logscale.broadcast_mul(mask)?.sum((1, 2))?.neg()?)?;
            x = layer.join(&kept, &changed)?;
        }
        Ok((x, logdet))
    }

    /// Exact inverse of [`Self::forward`].
    pub fn inverse(&self, u: &Tensor, cond: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let mut x = u.clone();
        for layer in self.layers.iter().rev() {
            let (kept, changed) = layer.split(&x)?;
            let (shift, logscale) = layer.stats(&kept, cond, mask)?;
            let changed = changed
                .broadcast_mul(&logscale.exp()?)?
                .broadcast_add(&shift)?
                .broadcast_mul(mask)?;
            x = layer.join(&kept, &changed)?;
        }
        Ok(x)
    }
}
