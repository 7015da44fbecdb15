//! Seeded, insertion-ordered parameter store. The CPU backend has no seedable
//! RNG, so every weight is drawn from our own stream; iteration order is the
//! creation order, which keeps optimizer state and checkpoints reproducible.

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Normal(0, std).
    Normal(f64),
    /// Uniform(-bound, bound).
    Uniform(f64),
}

pub struct ParamStore {
    device: Device,
    dtype: DType,
    rng: ChaCha20Rng,
    vars: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new(seed: u64, device: &Device, dtype: DType) -> Self {
        Self {
            device: device.clone(),
            dtype,
            rng: ChaCha20Rng::seed_from_u64(seed),
            vars: Vec::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn var(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Result<Tensor> {
        let name = name.into();
        let count: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; count],
            Init::Ones => vec![1.0; count],
            Init::Const(v) => vec![v; count],
            Init::Normal(std) => {
                let mut out = Vec::with_capacity(count);
                // Box-Muller on our stream
                while out.len() < count {
                    let u1: f64 = self.rng.random::<f64>().max(1e-12);
                    let u2: f64 = self.rng.random();
                    let r = (-2.0 * u1.ln()).sqrt();
                    let theta = 2.0 * std::f64::consts::PI * u2;
                    out.push(r * theta.cos() * std);
                    if out.len() < count {
                        out.push(r * theta.sin() * std);
                    }
                }
                out
            }
            Init::Uniform(bound) => (0..count)
                .map(|_| (self.rng.random::<f64>() * 2.0 - 1.0) * bound)
                .collect(),
        };
        let tensor = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&tensor)?;
        let out = var.as_tensor().clone();
        self.vars.push((name, var));
        Ok(out)
    }

    /// Kaiming-style fan-in scaling for conv/linear weights.
    pub fn kaiming(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Tensor> {
        let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
        let std = (2.0 / fan_in as f64).sqrt();
        self.var(name, shape, Init::Normal(std))
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn named_vars(&self) -> &[(String, Var)] {
        &self.vars
    }

    pub fn n_params(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.as_tensor().elem_count()).sum()
    }

    pub fn set(&mut self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| ModelError::ShapeMismatch(format!("unknown parameter {name}")))?;
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_are_seed_deterministic() {
        let dev = Device::Cpu;
        let mut a = ParamStore::new(5, &dev, DType::F32);
        let mut b = ParamStore::new(5, &dev, DType::F32);
        let ta = a.var("w", &[4, 3], Init::Normal(0.1)).unwrap();
        let tb = b.var("w", &[4, 3], Init::Normal(0.1)).unwrap();
        assert_eq!(ta.to_vec2::<f32>().unwrap(), tb.to_vec2::<f32>().unwrap());
        let mut c = ParamStore::new(6, &dev, DType::F32);
        let tc = c.var("w", &[4, 3], Init::Normal(0.1)).unwrap();
        assert_ne!(ta.to_vec2::<f32>().unwrap(), tc.to_vec2::<f32>().unwrap());
    }

    #[test]
    fn set_updates_the_live_tensor() {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(1, &dev, DType::F32);
        let t = store.var("w", &[2], Init::Zeros).unwrap();
        store.set("w", &Tensor::new(&[1.5f32, -2.5], &dev).unwrap()).unwrap();
        assert_eq!(t.to_vec1::<f32>().unwrap(), vec![1.5, -2.5]);
    }
}
