#![allow(dead_code)]

use objman::tensor::nn::ParamSet;
use objman::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Weighted sum so every output entry gets a distinct cotangent.
pub fn probe(g: &mut Graph<f64>, v: Var) -> Var {
    let n = g.value(v).len();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4).collect();
    let w = g.constant(Tensor::from_vec(g.shape(v), w).unwrap());
    let p = g.mul(v, w).unwrap();
    g.sum(p)
}

/// Compares `samples` random gradient entries against central differences of `eval`.
pub fn fd_check(values: &[Tensor<f64>], analytic: &[Tensor<f64>], eval: impl Fn(&[Tensor<f64>]) -> f64, samples: usize, seed: u64) {
    fd_check_with_floor(values, analytic, eval, samples, seed, 1e-4);
}

/// As [`fd_check`], with relative errors measured against at least `floor`.
/// Large losses need a larger floor: differencing cancels `|loss|·1e-16/h`.
pub fn fd_check_with_floor(
    values: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    eval: impl Fn(&[Tensor<f64>]) -> f64,
    samples: usize,
    seed: u64,
    floor: f64,
) {
    let mut rng = rng(seed);
    let h = 1e-6;
    let mut checked = 0;
    let mut nonzero = 0;
    while checked < samples {
        let i = rng.random_range(0..values.len());
        if values[i].is_empty() {
            continue;
        }
        let j = rng.random_range(0..values[i].len());
        let mut plus = values.to_vec();
        plus[i].data_mut()[j] += h;
        let mut minus = values.to_vec();
        minus[i].data_mut()[j] -= h;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
        let a = analytic[i].data()[j];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        assert!(err < 1e-4, "tensor {i} entry {j}: analytic {a} numeric {numeric}");
        checked += 1;
        nonzero += usize::from(a.abs() > 1e-9);
    }
    assert!(nonzero > 0, "every sampled gradient was zero");
}

pub fn param_values(p: &ParamSet<f64>) -> Vec<Tensor<f64>> {
    p.iter().map(|(_, t)| t.clone()).collect()
}

pub fn set_params(p: &mut ParamSet<f64>, values: &[Tensor<f64>]) {
    for (dst, src) in p.tensors_mut().zip(values) {
        dst.data_mut().copy_from_slice(src.data());
    }
}
