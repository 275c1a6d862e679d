//! Isotropy and attention spectral-entropy regularizers and the annealed objective.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numcore::{normalized_entropy, sphere_matrix, Rng, Tape, Tensor, Var};

/// Row-stochasticity tolerance for attention inputs.
pub const STOCHASTIC_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub lambda1_target: f64,
    pub lambda2_target: f64,
    pub ramp_steps: u64,
    pub n_probes: usize,
    /// Singular values kept per head; `None` means `min(N, d_head)`.
    pub entropy_rank_cap: Option<usize>,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            lambda1_target: 1e-3,
            lambda2_target: 1e-2,
            ramp_steps: 500,
            n_probes: 64,
            entropy_rank_cap: None,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.lambda1_target >= 0.0 && self.lambda1_target.is_finite(),
            Input,
            "regularizer.lambda1_target must be >= 0"
        );
        ensure!(
            self.lambda2_target >= 0.0 && self.lambda2_target.is_finite(),
            Input,
            "regularizer.lambda2_target must be >= 0"
        );
        ensure!(self.ramp_steps >= 1, Input, "regularizer.ramp_steps must be >= 1");
        ensure!(self.n_probes >= 1, Input, "regularizer.n_probes must be >= 1");
        if let Some(r) = self.entropy_rank_cap {
            ensure!(r >= 1, Input, "regularizer.entropy_rank_cap must be >= 1");
        }
        Ok(())
    }

    pub fn rank_cap(&self, seq_len: usize, d_head: usize) -> usize {
        self.entropy_rank_cap
            .unwrap_or(seq_len.min(d_head))
            .min(seq_len)
    }
}

/// Rows scaled to unit norm.
pub fn normalize_rows(z: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(z.clone());
    let out = tape.normalize_rows(v)?;
    Ok(tape.value(out).clone())
}

/// Probe matrix (`P×d`, rows uniform on the sphere) for one KT-CW evaluation.
pub fn draw_probes(n_probes: usize, d: usize, rng: &mut Rng) -> Result<Tensor> {
    ensure!(n_probes >= 1, Precondition, "need at least one probe");
    sphere_matrix(n_probes, d, rng)
}

/// `(1/P) Σ_p (Var_j⟨ẑ_j, u_p⟩ − 1/d)²` with the probes held constant.
pub fn kt_cw_loss_with_probes(tape: &mut Tape, z_hat: Var, probes: &Tensor) -> Result<Var> {
    let (m, d) = (tape.value(z_hat).rows(), tape.value(z_hat).cols());
    ensure!(m >= 2, Degenerate, "need at least 2 rows for a variance, got {m}");
    ensure!(probes.cols() == d, Shape, "probe width {} vs {}", probes.cols(), d);
    let ut = tape.constant(probes.transpose());
    let proj = tape.matmul(z_hat, ut)?; // M×P
    let var = tape.col_variance(proj)?; // 1×P
    let dev = tape.add_scalar(var, -1.0 / d as f64);
    let sq = tape.square(dev)?;
    Ok(tape.mean(sq))
}

/// KT-CW loss with `n_probes` fresh probes drawn from `rng`; the probes are returned for the record.
pub fn kt_cw_loss(tape: &mut Tape, z_hat: Var, n_probes: usize, rng: &mut Rng) -> Result<(Var, Tensor)> {
    let d = tape.value(z_hat).cols();
    let probes = draw_probes(n_probes, d, rng)?;
    let loss = kt_cw_loss_with_probes(tape, z_hat, &probes)?;
    Ok((loss, probes))
}

/// Expected KT-CW loss over uniform probes: `((tr A)² + 2‖A‖_F²)/(d(d+2))`, `A = Σ_c − I/d`.
pub fn kt_cw_closed_form(z_hat: &Tensor) -> Result<f64> {
    let (m, d) = (z_hat.rows(), z_hat.cols());
    ensure!(m >= 2, Degenerate, "need at least 2 rows for a covariance, got {m}");
    let mut a = z_hat.second_moment(true);
    for i in 0..d {
        let v = a.at(i, i) - 1.0 / d as f64;
        a.set(i, i, v);
    }
    let tr = a.trace();
    let fro2 = a.data().iter().map(|x| x * x).sum::<f64>();
    let df = d as f64;
    Ok((tr * tr + 2.0 * fro2) / (df * (df + 2.0)))
}

/// Shannon entropy of `σ / Σσ`, with `0·ln 0 = 0`.
pub fn spectral_entropy(sigma: &[f64]) -> Result<f64> {
    normalized_entropy(sigma)
}

fn check_stochastic(a: &Tensor) -> Result<()> {
    ensure!(a.is_square(), Shape, "attention matrix must be square");
    for i in 0..a.rows() {
        let row = a.row(i);
        ensure!(
            row.iter().all(|&v| v >= -STOCHASTIC_TOL),
            Input,
            "attention row {i} has a negative entry"
        );
        let s: f64 = row.iter().sum();
        ensure!((s - 1.0).abs() <= STOCHASTIC_TOL, Input, "attention row {i} sums to {s}");
    }
    Ok(())
}

/// `Σ_h (ln r − H(top-r σ(A_h)))²` over the given heads.
pub fn kt_attn_loss(tape: &mut Tape, heads: &[Var], r_cap: usize) -> Result<Var> {
    ensure!(!heads.is_empty(), Input, "no attention heads");
    ensure!(r_cap >= 1, Input, "rank cap must be >= 1");
    let cap = (r_cap as f64).ln();
    let mut terms = Vec::with_capacity(heads.len());
    for &h in heads {
        check_stochastic(tape.value(h))?;
        let s = tape.singular_values(h, r_cap)?;
        let ent = tape.entropy(s)?;
        let neg = tape.scale(ent, -1.0);
        let gap = tape.add_scalar(neg, cap);
        terms.push(tape.square(gap)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(total)
}

/// Linear ramp `λ* · min(1, t / ramp)`.
pub fn anneal(step: u64, target: f64, ramp_steps: u64) -> f64 {
    if step >= ramp_steps {
        target
    } else {
        target * (step as f64 / ramp_steps as f64)
    }
}

/// Weights `(λ1(t), λ2(t))` for a step.
pub fn lambdas(step: u64, cfg: &RegularizerConfig) -> (f64, f64) {
    (
        anneal(step, cfg.lambda1_target, cfg.ramp_steps),
        anneal(step, cfg.lambda2_target, cfg.ramp_steps),
    )
}

/// `ce + λ1(t) Σ cw + λ2(t) Σ attn`. Terms whose weight is zero are left off the tape.
pub fn total_loss(
    tape: &mut Tape,
    ce: Var,
    cw_per_layer: &[Var],
    attn_per_layer: &[Var],
    step: u64,
    cfg: &RegularizerConfig,
) -> Result<Var> {
    let (l1, l2) = lambdas(step, cfg);
    let mut total = ce;
    for (w, terms) in [(l1, cw_per_layer), (l2, attn_per_layer)] {
        if w == 0.0 || terms.is_empty() {
            continue;
        }
        let mut s = terms[0];
        for &t in &terms[1..] {
            s = tape.add(s, t)?;
        }
        let ws = tape.scale(s, w);
        total = tape.add(total, ws)?;
    }
    Ok(total)
}
