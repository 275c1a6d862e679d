#![allow(dead_code)]

use geolan_core::model::{ModelConfig, Params};
use geolan_core::numcore::{Rng, Tensor};

pub fn micro() -> ModelConfig {
    ModelConfig {
        vocab_size: 32,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_head: 8,
        max_seq: 12,
        ffn_mult: 2,
    }
}

pub fn micro_params(seed: u64) -> Params {
    Params::init(&micro(), seed).unwrap()
}

pub fn tokens(n: usize, vocab: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.below(vocab)).collect()
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::matrix(rows, cols, rng.normal_vec(rows * cols, 1.0)).unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Init weights jittered by N(0, 0.1²), so no gradient entry sits near zero by symmetry.
pub fn generic_params(seed: u64) -> Params {
    let mut p = micro_params(seed);
    let mut rng = Rng::new(seed ^ 0x9e37);
    for t in p.tensors.iter_mut() {
        for x in t.data_mut() {
            *x += 0.1 * rng.normal();
        }
    }
    p
}
