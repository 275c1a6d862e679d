use serde_json::json;

use super::{CheckOptions, Tally, VerificationReport};
use crate::error::{ensure, Result};
use crate::geometry::{cone_count, max_overlap, probe_interference, Interference};
use crate::geoloss::{kt_attn_loss, kt_cw_closed_form, spectral_entropy};
use crate::numcore::linalg::orthonormal_columns;
use crate::numcore::{dot, norm, sample_unit_sphere, svd, Rng, Tape, Tensor};

/// Random symmetric `d×d` matrix with Gaussian entries, optionally made traceless.
pub fn random_symmetric(d: usize, traceless: bool, rng: &mut Rng) -> Tensor {
    let mut a = Tensor::zeros(&[d, d]);
    for i in 0..d {
        for j in i..d {
            let v = rng.normal();
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    if traceless {
        let t = a.trace() / d as f64;
        for i in 0..d {
            let v = a.at(i, i) - t;
            a.set(i, i, v);
        }
    }
    a
}

/// `((tr A)² + 2‖A‖_F²) / (d(d+2))`.
pub fn fourth_moment_closed_form(a: &Tensor) -> f64 {
    let d = a.rows() as f64;
    let tr = a.trace();
    let fro2: f64 = a.data().iter().map(|x| x * x).sum();
    (tr * tr + 2.0 * fro2) / (d * (d + 2.0))
}

/// Sample mean of `(uᵀAu)²` over uniform unit `u`, with its standard error.
pub fn fourth_moment_monte_carlo(a: &Tensor, n_samples: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    ensure!(n_samples >= 2, Precondition, "need at least 2 samples");
    let d = a.rows();
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut au = vec![0.0; d];
    for _ in 0..n_samples {
        let u = sample_unit_sphere(d, rng)?;
        for (i, o) in au.iter_mut().enumerate() {
            *o = dot(a.row(i), &u);
        }
        let q = dot(&u, &au);
        let x = q * q;
        s1 += x;
        s2 += x * x;
    }
    let n = n_samples as f64;
    let mean = s1 / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Monte-Carlo check of the fourth-moment identity on 10 random symmetric
/// matrices (every other one traceless), with a 5-standard-error band.
pub fn check_fourth_moment(d: usize, n_samples: usize, rng: &mut Rng) -> Result<VerificationReport> {
    check_fourth_moment_with(d, n_samples, rng, &CheckOptions::default())
}

pub fn check_fourth_moment_with(
    d: usize,
    n_samples: usize,
    rng: &mut Rng,
    opts: &CheckOptions,
) -> Result<VerificationReport> {
    ensure!(d >= 2, Precondition, "dimension must be >= 2");
    let mut t = Tally::new(
        "fourth_moment",
        false,
        json!({"d": d, "n_samples": n_samples, "matrices": 10, "band_se": 5.0}),
        opts,
    );
    for k in 0..10 {
        let a = random_symmetric(d, k % 2 == 1, rng);
        let exact = fourth_moment_closed_form(&a);
        let (mc, se) = fourth_moment_monte_carlo(&a, n_samples, rng)?;
        t.trial();
        t.check((mc - exact).abs(), 5.0 * se, || json!({"matrix": k, "exact": exact, "mc": mc, "se": se}));
    }
    Ok(t.finish())
}

/// Centres the rows and rescales them to unit norm, repeating until the mean vanishes.
fn center_on_sphere(z: &Tensor, t: &mut Tally) -> Result<Option<Tensor>> {
    let (m, d) = (z.rows(), z.cols());
    let mut rows: Vec<Vec<f64>> = z.to_rows();
    let mut adjusted = false;
    for _ in 0..200 {
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m as f64).collect();
        let mean_norm = norm(&mean);
        let row_dev = rows.iter().map(|r| (norm(r) - 1.0).abs()).fold(0.0, f64::max);
        if mean_norm <= 1e-13 && row_dev <= 1e-13 {
            break;
        }
        adjusted = true;
        let mut next = Vec::with_capacity(rows.len());
        for r in &rows {
            let c: Vec<f64> = r.iter().zip(&mean).map(|(a, b)| a - b).collect();
            let n = norm(&c);
            if n > 1e-12 {
                next.push(c.iter().map(|x| x / n).collect());
            }
        }
        if next.len() < rows.len() {
            t.note(format!("{} rows vanished after centering and were dropped", rows.len() - next.len()));
        }
        rows = next;
        if rows.len() < 2 {
            return Ok(None);
        }
    }
    if adjusted {
        t.note("input was centered and renormalized");
    }
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect();
    if norm(&mean) > 1e-10 {
        t.note(format!("centering did not converge; residual mean norm {:.3e}", norm(&mean)));
    }
    Ok(Some(Tensor::from_rows(&rows)?))
}

/// Cone-count bound `|I(v, Δ)| ≤ M (1/d + √(d(d+2)η/2)) / cos²Δ` over random cones.
///
/// Half of the cone axes point at data rows, the rest are uniform on the sphere.
pub fn verify_prop_a(z: &Tensor, n_trials: usize, rng: &mut Rng) -> Result<VerificationReport> {
    verify_prop_a_with(z, n_trials, rng, &CheckOptions::default())
}

pub fn verify_prop_a_with(
    z: &Tensor,
    n_trials: usize,
    rng: &mut Rng,
    opts: &CheckOptions,
) -> Result<VerificationReport> {
    let (m0, d) = (z.rows(), z.cols());
    let mut t = Tally::new("prop_a_cone", true, json!({"m": m0, "d": d, "n_trials": n_trials}), opts);
    let Some(zc) = center_on_sphere(z, &mut t)? else {
        t.note("fewer than 2 rows survive centering; bound is vacuous");
        return Ok(t.finish());
    };
    let m = zc.rows();
    let eta = kt_cw_closed_form(&zc)?;
    let df = d as f64;
    let core = m as f64 * (1.0 / df + (df * (df + 2.0) * eta / 2.0).sqrt());
    let rows = zc.to_rows();
    let lo = 0.1;
    let hi = std::f64::consts::FRAC_PI_2 - 0.1;
    for k in 0..n_trials {
        let v = if k % 2 == 0 {
            rows[rng.below(m)].clone()
        } else {
            sample_unit_sphere(d, rng)?
        };
        let delta = rng.uniform(lo, hi);
        let count = cone_count(&rows, &v, delta)?;
        let bound = core / delta.cos().powi(2);
        t.trial();
        t.check(count as f64, bound, || json!({"trial": k, "aperture": delta, "eta": eta}));
    }
    Ok(t.finish())
}

/// `m` unit rows from a Gaussian with random per-axis scales, so clouds range from near-isotropic to collapsed.
pub fn random_unit_cloud(m: usize, d: usize, rng: &mut Rng) -> Result<Tensor> {
    ensure!(m >= 1 && d >= 1, Precondition, "empty cloud");
    let scales: Vec<f64> = (0..d).map(|_| (rng.uniform(-3.0, 1.0)).exp()).collect();
    let mut rows = Vec::with_capacity(m);
    while rows.len() < m {
        let r: Vec<f64> = scales.iter().map(|s| s * rng.normal()).collect();
        let n = norm(&r);
        if n > 1e-12 {
            rows.push(r.iter().map(|x| x / n).collect::<Vec<f64>>());
        }
    }
    Tensor::from_rows(&rows)
}

/// Row-wise softmax of Gaussian logits with a random sharpness; optionally causal.
pub fn random_attention(n: usize, causal: bool, rng: &mut Rng) -> Result<Tensor> {
    ensure!(n >= 1, Precondition, "empty attention matrix");
    let sharp = rng.uniform(-2.0, 3.0).exp();
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let width = if causal { i + 1 } else { n };
        let logits: Vec<f64> = (0..width).map(|_| sharp * rng.normal()).collect();
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|x| (x - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        for (j, v) in e.iter().enumerate() {
            a.set(i, j, v / z);
        }
    }
    Ok(a)
}

/// Entropy-deficit, Pinsker and max-probability bounds for every head.
pub fn verify_prop_b(heads: &[Tensor], r_cap: usize) -> Result<VerificationReport> {
    verify_prop_b_with(heads, r_cap, &CheckOptions::default())
}

pub fn verify_prop_b_with(heads: &[Tensor], r_cap: usize, opts: &CheckOptions) -> Result<VerificationReport> {
    let mut t = Tally::new("prop_b_entropy", true, json!({"heads": heads.len(), "r_cap": r_cap}), opts);
    let mut tape = Tape::new();
    let vars: Vec<_> = heads.iter().map(|h| tape.constant(h.clone())).collect();
    let loss = kt_attn_loss(&mut tape, &vars, r_cap)?;
    let eta = tape.scalar(loss);
    let r = r_cap as f64;
    let root = eta.sqrt();
    let pinsker = (2.0 * root).sqrt();
    for (h, a) in heads.iter().enumerate() {
        let s = svd(a)?;
        let top = &s.sigma[..r_cap];
        let total: f64 = top.iter().sum();
        let p: Vec<f64> = top.iter().map(|x| x / total).collect();
        let gap = r.ln() - spectral_entropy(top)?;
        let l1: f64 = p.iter().map(|x| (x - 1.0 / r).abs()).sum();
        let pmax = p.iter().copied().fold(0.0, f64::max);
        t.trial();
        let ctx = || json!({"head": h, "eta": eta});
        t.check(gap, root, ctx);
        t.check(l1, pinsker, ctx);
        t.check(pmax, 1.0 / r + 0.5 * pinsker, ctx);
    }
    Ok(t.finish())
}

/// Random subspaces of the given dimensions whose pairwise overlaps stay below `target`.
///
/// Starts from mutually orthogonal coordinate blocks and rotates them toward
/// random directions as far as the target allows.
pub fn controlled_subspaces(dims: &[usize], d: usize, target: f64, rng: &mut Rng) -> Result<Vec<Tensor>> {
    ensure!(dims.len() >= 2, Precondition, "need at least 2 subspaces");
    ensure!(dims.iter().all(|&k| k >= 1 && k <= d), Precondition, "subspace dimension outside 1..={d}");
    ensure!((0.0..=1.0).contains(&target), Precondition, "overlap target {target} outside [0, 1]");
    let random: Vec<Tensor> = dims
        .iter()
        .map(|&k| Tensor::matrix(d, k, rng.normal_vec(d * k, 1.0)))
        .collect::<Result<_>>()?;
    let total: usize = dims.iter().sum();
    let build = |phi: f64| -> Result<Option<Vec<Tensor>>> {
        let mut out = Vec::with_capacity(dims.len());
        let mut offset = 0;
        for (q, &k) in dims.iter().enumerate() {
            let mut m = random[q].clone();
            let g = random[q].frobenius_norm() / (k as f64).sqrt();
            for c in 0..k {
                for i in 0..d {
                    let base = if total <= d && i == offset + c { 1.0 } else { 0.0 };
                    m.set(i, c, phi.cos() * base + phi.sin() * random[q].at(i, c) / g);
                }
            }
            offset += k;
            let u = orthonormal_columns(&m, 1e-10);
            if u.cols() != k {
                return Ok(None);
            }
            out.push(u);
        }
        Ok(Some(out))
    };
    if total > d {
        let u = build(std::f64::consts::FRAC_PI_2)?
            .ok_or_else(|| crate::Error::Construction("random subspaces are degenerate".into()))?;
        let o = max_overlap(&u)?;
        ensure!(o <= target, Construction, "overlap {o:.3} exceeds target {target}; dimensions do not fit in d = {d}");
        return Ok(u);
    }
    let mut best = build(0.0)?.expect("coordinate blocks are orthonormal");
    let (mut lo, mut hi) = (0.0, std::f64::consts::FRAC_PI_2);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        match build(mid)? {
            Some(u) if max_overlap(&u)? <= target => {
                best = u;
                lo = mid;
            }
            _ => hi = mid,
        }
    }
    Ok(best)
}

/// Arguments of one randomized interference trial, kept for reporting.
#[derive(Clone, Debug)]
pub struct ProbeTrialSetup {
    pub bases: Vec<Tensor>,
    pub j: usize,
    pub w: Vec<f64>,
    pub components: Vec<Vec<f64>>,
}

fn in_span(basis: &Tensor, rng: &mut Rng, scale: f64) -> Vec<f64> {
    let c = rng.normal_vec(basis.cols(), scale);
    (0..basis.rows()).map(|i| dot(basis.row(i), &c)).collect()
}

fn random_trial(dims: &[usize], d: usize, target: f64, rng: &mut Rng) -> Result<ProbeTrialSetup> {
    let bases = controlled_subspaces(dims, d, target, rng)?;
    let j = rng.below(bases.len());
    let w = in_span(&bases[j], rng, 1.0);
    let components = bases
        .iter()
        .map(|b| {
            let s = rng.normal().exp();
            in_span(b, rng, s)
        })
        .collect();
    Ok(ProbeTrialSetup { bases, j, w, components })
}

/// Cross-grain interference against `(‖w‖/K) Σ_{q≠j} ‖x^(q)‖` on random compositions.
pub fn verify_probe_bound(
    subspace_dims: &[usize],
    d: usize,
    overlap_target: f64,
    n_trials: usize,
    rng: &mut Rng,
) -> Result<VerificationReport> {
    verify_probe_bound_with(subspace_dims, d, overlap_target, n_trials, rng, &CheckOptions::default())
}

pub fn verify_probe_bound_with(
    subspace_dims: &[usize],
    d: usize,
    overlap_target: f64,
    n_trials: usize,
    rng: &mut Rng,
    opts: &CheckOptions,
) -> Result<VerificationReport> {
    let mut t = Tally::new(
        "probe_interference",
        true,
        json!({"dims": subspace_dims, "d": d, "overlap_target": overlap_target, "n_trials": n_trials}),
        opts,
    );
    let mut residual_form_exceeded = 0;
    for k in 0..n_trials {
        let s = random_trial(subspace_dims, d, overlap_target, rng)?;
        let r = probe_interference(&s.w, s.j, &s.components, &s.bases)?;
        let direct: f64 = r.factor
            + s.components
                .iter()
                .enumerate()
                .filter(|(q, _)| *q != s.j)
                .map(|(_, c)| dot(&s.w, c))
                .sum::<f64>();
        t.trial();
        let decomposition_err = (r.response - direct).abs();
        if decomposition_err > 1e-10 * r.response.abs().max(1.0) {
            t.check(decomposition_err, 0.0, || json!({"trial": k, "kind": "decomposition"}));
        }
        t.check(r.interference.abs(), r.bound, || json!({"trial": k, "grain": s.j, "inv_k": r.inv_k}));
        if r.interference.abs() > r.residual_form + super::SLACK_TOL {
            residual_form_exceeded += 1;
        }
    }
    if residual_form_exceeded > 0 {
        t.note(format!(
            "the residual form (|w|/K) sqrt(m-1) |x - P_j x| was exceeded in {residual_form_exceeded} trials; \
             it presumes components equal to orthogonal projections of x"
        ));
    }
    Ok(t.finish())
}

/// Two lines in the plane at overlap `overlap`, probe on the first, all mass on
/// the second along the shared direction: the interference equals the bound.
pub fn probe_extremal_case(overlap: f64) -> Result<Interference> {
    ensure!((0.0..=1.0).contains(&overlap), Precondition, "overlap outside [0, 1]");
    let s = (1.0 - overlap * overlap).sqrt();
    let u1 = Tensor::matrix(2, 1, vec![1.0, 0.0])?;
    let u2 = Tensor::matrix(2, 1, vec![overlap, s])?;
    probe_interference(&[1.0, 0.0], 0, &[vec![0.0, 0.0], vec![overlap, s]], &[u1, u2])
}
