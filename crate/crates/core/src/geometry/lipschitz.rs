use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::model::{layer_update, Params};
use crate::numcore::{Rng, Tensor};

/// Perturbation sizes relative to `‖Z‖_F`.
pub const LIPSCHITZ_SCALES: [f64; 3] = [1e-3, 1e-2, 1e-1];
pub const DEFAULT_PAIRS_PER_SCALE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// Largest observed `‖f(Z) − f(Z̃)‖_F / ‖Z − Z̃‖_F`.
    pub lambda: f64,
    pub ratios: Vec<f64>,
    pub skipped: usize,
}

/// `z` plus a random direction of Frobenius norm `size`.
pub fn perturb_state(z: &Tensor, size: f64, rng: &mut Rng) -> Tensor {
    let g = rng.normal_vec(z.len(), 1.0);
    let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut out = z.clone();
    if gn > 0.0 {
        for (o, gi) in out.data_mut().iter_mut().zip(&g) {
            *o += size * gi / gn;
        }
    }
    out
}

/// Maximum difference quotient of `map` over random pairs around each base state.
pub fn estimate_lipschitz<F>(
    map: F,
    bases: &[Tensor],
    scales: &[f64],
    pairs_per_scale: usize,
    rng: &mut Rng,
) -> Result<LipschitzEstimate>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    ensure!(pairs_per_scale >= 1, Precondition, "need at least one pair per scale");
    ensure!(!bases.is_empty(), Precondition, "no base states");
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for z in bases {
        let fz = map(z)?;
        let zn = z.frobenius_norm();
        for &s in scales {
            for _ in 0..pairs_per_scale {
                let zt = perturb_state(z, s * zn, rng);
                let dz = zt.sub(z)?.frobenius_norm();
                if dz == 0.0 {
                    skipped += 1;
                    continue;
                }
                let df = map(&zt)?.sub(&fz)?.frobenius_norm();
                ratios.push(df / dz);
            }
        }
    }
    let lambda = ratios.iter().copied().fold(0.0, f64::max);
    Ok(LipschitzEstimate {
        lambda,
        ratios,
        skipped,
    })
}

/// Lipschitz estimate for the residual update `f_l` of block `layer`.
pub fn estimate_layer_lipschitz(
    params: &Params,
    layer: usize,
    bases: &[Tensor],
    sample_pairs: usize,
    rng: &mut Rng,
) -> Result<LipschitzEstimate> {
    estimate_lipschitz(
        |z| layer_update(params, layer, z),
        bases,
        &LIPSCHITZ_SCALES,
        sample_pairs,
        rng,
    )
}

/// `Λ_out · Π_l (1 + Λ_l)`.
pub fn lipschitz_chain_bound(lambdas: &[f64], lambda_out: f64) -> Result<f64> {
    ensure!(
        lambda_out >= 0.0 && lambdas.iter().all(|&l| l >= 0.0),
        Precondition,
        "Lipschitz constants must be >= 0"
    );
    Ok(lambdas.iter().fold(lambda_out, |acc, l| acc * (1.0 + l)))
}
