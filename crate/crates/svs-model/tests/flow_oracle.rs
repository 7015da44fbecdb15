//! Flow checks against independent oracles: the analytic log-determinant is
//! compared with the determinant of a numerically assembled Jacobian at
//! latent dim 4 over 2 frames, and invertibility is verified round-trip.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use svs_model::flow::CouplingFlow;
use svs_model::modules::randn;
use svs_model::params::ParamStore;

const LATENT: usize = 4;
const FRAMES: usize = 2;
const COND: usize = 3;

fn build_flow(seed: u64) -> (CouplingFlow, ParamStore) {
    let dev = Device::Cpu;
    let mut store = ParamStore::new(seed, &dev, DType::F64);
    let flow = CouplingFlow::new(&mut store, "flow", 2, LATENT, COND, 8).unwrap();
    // move off the identity initialization
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xF10);
    for (name, var) in store.named_vars() {
        if name.contains(".out.") {
            let noise = randn(var.as_tensor().dims(), &mut rng, &dev, DType::F64).unwrap();
            var.set(&(noise * 0.6).unwrap()).unwrap();
        }
    }
    (flow, store)
}

/// Plain Gaussian elimination determinant for the small numeric Jacobian.
fn determinant(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        if m[pivot][col].abs() < 1e-14 {
            return 0.0;
        }
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        det *= m[col][col];
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    det
}

#[test]
fn log_determinant_matches_numeric_jacobian() {
    let dev = Device::Cpu;
    let (flow, _store) = build_flow(21);
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let z0: Vec<f64> = (0..LATENT * FRAMES).map(|i| (i as f64 * 0.37).sin()).collect();
    let cond = randn(&[1, COND, FRAMES], &mut rng, &dev, DType::F64).unwrap();
    let mask = Tensor::ones((1, 1, FRAMES), DType::F64, &dev).unwrap();

    let run = |flat: &[f64]| -> (Vec<f64>, f64) {
        let z = Tensor::from_vec(flat.to_vec(), &[1, LATENT, FRAMES], &dev).unwrap();
        let (u, logdet) = flow.forward(&z, &cond, &mask).unwrap();
        (
            u.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            logdet.to_vec1::<f64>().unwrap()[0],
        )
    };

    let (_, analytic_logdet) = run(&z0);
    assert!(analytic_logdet.abs() > 1e-3, "flow should be non-trivial, logdet {analytic_logdet}");

    let n = LATENT * FRAMES;
    let h = 1e-6;
    let mut jacobian = vec![vec![0.0f64; n]; n];
    for j in 0..n {
        let mut plus = z0.clone();
        plus[j] += h;
        let (up, _) = run(&plus);
        let mut minus = z0.clone();
        minus[j] -= h;
        let (um, _) = run(&minus);
        for i in 0..n {
            jacobian[i][j] = (up[i] - um[i]) / (2.0 * h);
        }
    }
    let det = determinant(jacobian);
    assert!(det.abs() > 0.0);
    let numeric_logdet = det.abs().ln();
    let err = (numeric_logdet - analytic_logdet).abs();
    println!("PASS flow jacobian: analytic {analytic_logdet:.6} vs numeric {numeric_logdet:.6}");
    assert!(err < 1e-5, "logdet mismatch: analytic {analytic_logdet} numeric {numeric_logdet}");
}

#[test]
fn inverse_round_trip_stays_tight() {
    let dev = Device::Cpu;
    let (flow, _store) = build_flow(33);
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let z = randn(&[2, LATENT, 6], &mut rng, &dev, DType::F64).unwrap();
    let cond = randn(&[2, COND, 6], &mut rng, &dev, DType::F64).unwrap();
    let mask = Tensor::ones((2, 1, 6), DType::F64, &dev).unwrap();
    let (u, _) = flow.forward(&z, &cond, &mask).unwrap();
    let back = flow.inverse(&u, &cond, &mask).unwrap();
    let err = (&back - &z).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
    assert!(err <= 1e-4, "round trip error {err}");
}
