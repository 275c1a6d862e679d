//! Dense numerics shared by every other module.

pub mod gradcheck;
pub mod linalg;
pub mod rng;
pub mod special;
pub mod tape;
pub mod tensor;

pub use gradcheck::grad_check;
pub use linalg::{svd, sym_eigh, Eigh, Svd};
pub use rng::{Rng, Stream};
pub use special::{ball_volume, ln_ball_volume};
pub use tape::{grad, normalized_entropy, value_and_grad, Grads, Tape, Var};
pub use tensor::{dot, norm, Tensor};

use crate::error::{ensure, Result};

/// Uniform draw from the unit sphere `S^{d−1}` (normalized Gaussian).
pub fn sample_unit_sphere(d: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    ensure!(d >= 1, Precondition, "sphere dimension must be >= 1");
    loop {
        let mut u = rng.normal_vec(d, 1.0);
        let n = norm(&u);
        if n > 1e-300 {
            u.iter_mut().for_each(|x| *x /= n);
            return Ok(u);
        }
    }
}

/// `n` sphere samples stacked as rows of an `n×d` matrix.
pub fn sphere_matrix(n: usize, d: usize, rng: &mut Rng) -> Result<Tensor> {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        data.extend(sample_unit_sphere(d, rng)?);
    }
    Tensor::matrix(n, d, data)
}
