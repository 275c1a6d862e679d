use serde::{Deserialize, Serialize};

use super::grain::GrainAssignment;
use crate::error::{ensure, Result};
use crate::numcore::{dot, norm, svd, sym_eigh, Tensor};

/// Largest basis size per grain.
pub const DEFAULT_MAX_RANK: usize = 8;
/// Eigenvalues below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-10;
/// Membership tolerance for "vector lies in a subspace".
pub const SPAN_TOL: f64 = 1e-8;

/// Orthonormal basis (`d×rank`) of one grain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrainBasis {
    pub basis: Tensor,
    pub rank: usize,
    /// Fewer member states than the requested rank.
    pub undersized: bool,
    /// Fewer independent directions than requested.
    pub rank_deficient: bool,
}

impl GrainBasis {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        project(&self.basis, x)
    }
}

/// `U Uᵀ x` for a basis with orthonormal columns.
pub fn project(basis: &Tensor, x: &[f64]) -> Vec<f64> {
    let (d, q) = (basis.rows(), basis.cols());
    let mut out = vec![0.0; d];
    for k in 0..q {
        let c: f64 = (0..d).map(|i| basis.at(i, k) * x[i]).sum();
        for (i, o) in out.iter_mut().enumerate() {
            *o += c * basis.at(i, k);
        }
    }
    out
}

/// Principal directions of one set of states.
///
/// Directions come from the uncentered second moment, so the basis spans
/// the member states themselves.
pub fn principal_basis(states: &[Vec<f64>], max_rank: usize) -> Result<GrainBasis> {
    ensure!(!states.is_empty(), Input, "empty grain");
    let d = states[0].len();
    let x = Tensor::from_rows(states)?;
    let want = max_rank.min(states.len()).min(d);
    let eig = sym_eigh(&x.second_moment(false))?;
    let top = eig.values.first().copied().unwrap_or(0.0);
    let rank = eig
        .values
        .iter()
        .take(want)
        .filter(|&&l| top > 0.0 && l > RANK_TOL * top)
        .count();
    Ok(GrainBasis {
        basis: eig.vectors.select_cols(&(0..rank).collect::<Vec<_>>()),
        rank,
        undersized: states.len() < max_rank,
        rank_deficient: rank < want,
    })
}

/// Per-grain bases of rank up to `min(max_rank, grain size)`.
pub fn grain_subspaces(final_states: &Tensor, assignment: &GrainAssignment, max_rank: usize) -> Result<Vec<GrainBasis>> {
    ensure!(
        final_states.rows() == assignment.grain_of.len(),
        Shape,
        "{} states for {} tokens",
        final_states.rows(),
        assignment.grain_of.len()
    );
    ensure!(max_rank >= 1, Precondition, "rank must be >= 1");
    (0..assignment.n_grains)
        .map(|g| {
            let rows: Vec<Vec<f64>> = assignment
                .members(g)
                .iter()
                .map(|&i| final_states.row(i).to_vec())
                .collect();
            principal_basis(&rows, max_rank)
        })
        .collect()
}

/// `‖P_p P_q‖_op`, the largest singular value of `U_pᵀ U_q`.
pub fn projector_overlap(u_p: &Tensor, u_q: &Tensor) -> Result<f64> {
    ensure!(u_p.rows() == u_q.rows(), Shape, "basis dimensions differ");
    if u_p.cols() == 0 || u_q.cols() == 0 {
        return Ok(0.0);
    }
    let m = u_p.transpose().matmul(u_q)?;
    Ok(svd(&m)?.sigma[0])
}

/// Largest pairwise projector overlap (`1/K`) among a set of bases.
pub fn max_overlap(bases: &[Tensor]) -> Result<f64> {
    let mut best: f64 = 0.0;
    for p in 0..bases.len() {
        for q in p + 1..bases.len() {
            best = best.max(projector_overlap(&bases[p], &bases[q])?);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interference {
    /// `⟨w_j, x⟩`.
    pub response: f64,
    /// `⟨w_j, x^(j)⟩`.
    pub factor: f64,
    pub interference: f64,
    /// `1/K`, the largest pairwise projector overlap.
    pub inv_k: f64,
    /// `(‖w‖/K) Σ_{q≠j} ‖x^(q)‖`.
    pub bound: f64,
    /// `(‖w‖/K) √(m−1) ‖x − P_j x‖`; holds only when the components are the
    /// orthogonal projections of `x`, reported for comparison.
    pub residual_form: f64,
}

fn residual_norm(basis: &Tensor, x: &[f64]) -> f64 {
    let p = project(basis, x);
    x.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Splits the probe response of grain `j` into its own factor and cross-grain interference.
pub fn probe_interference(w_j: &[f64], j: usize, components: &[Vec<f64>], bases: &[Tensor]) -> Result<Interference> {
    let m = bases.len();
    ensure!(m >= 1 && components.len() == m, Input, "{} components for {} grains", components.len(), m);
    ensure!(j < m, Input, "grain {j} out of range");
    let d = bases[0].rows();
    ensure!(w_j.len() == d && components.iter().all(|c| c.len() == d), Shape, "dimension mismatch");
    let scale = |v: &[f64]| SPAN_TOL * norm(v).max(1.0);
    ensure!(residual_norm(&bases[j], w_j) <= scale(w_j), Input, "probe is not in grain {j}'s subspace");
    for (q, c) in components.iter().enumerate() {
        ensure!(residual_norm(&bases[q], c) <= scale(c), Input, "component {q} is not in its subspace");
    }
    let x: Vec<f64> = (0..d).map(|i| components.iter().map(|c| c[i]).sum()).collect();
    let response = dot(w_j, &x);
    let factor = dot(w_j, &components[j]);
    let inv_k = max_overlap(bases)?;
    let wn = norm(w_j);
    let others: f64 = components
        .iter()
        .enumerate()
        .filter(|(q, _)| *q != j)
        .map(|(_, c)| norm(c))
        .sum();
    Ok(Interference {
        response,
        factor,
        interference: response - factor,
        inv_k,
        bound: wn * inv_k * others,
        residual_form: wn * inv_k * ((m - 1) as f64).sqrt() * residual_norm(&bases[j], &x),
    })
}
