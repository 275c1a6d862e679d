use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CheckOptions, Tally, VerificationReport};
use crate::error::{ensure, Result};
use crate::geometry::{
    dist, estimate_layer_lipschitz, lipschitz_chain_bound, perturb_state, point_trajectory_distance, sample_ball,
    tube_count_in_region, ConvexRegion, RepresentationField, Tube, LIPSCHITZ_SCALES,
};
use crate::model::{block_forward, propagate, readout, Params};
use crate::numcore::{ln_ball_volume, sample_unit_sphere, Rng, Tensor};

/// Attempts per region before giving up on a disjoint family.
pub const MAX_REGION_RETRIES: usize = 100;

/// Uniform point in the ball of radius `r` around `c`.
fn uniform_in_ball(c: &[f64], r: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let d = c.len();
    let u = sample_unit_sphere(d, rng)?;
    let rad = r * rng.next_f64().powf(1.0 / d as f64);
    Ok(c.iter().zip(&u).map(|(a, b)| a + rad * b).collect())
}

/// `n` pairwise-disjoint data-anchored balls.
///
/// Balls are placed greedily; a placement that gets stuck starts over, at most
/// [`MAX_REGION_RETRIES`] times.
pub fn sample_disjoint_balls(field: &RepresentationField, n: usize, rng: &mut Rng) -> Result<Vec<ConvexRegion>> {
    let diameter = field.diameter();
    for _ in 0..MAX_REGION_RETRIES {
        if let Some(balls) = greedy_balls(field, n, diameter, rng)? {
            return Ok(balls);
        }
    }
    Err(crate::Error::Construction(format!(
        "could not place {n} disjoint regions after {MAX_REGION_RETRIES} attempts"
    )))
}

fn greedy_balls(field: &RepresentationField, n: usize, diameter: f64, rng: &mut Rng) -> Result<Option<Vec<ConvexRegion>>> {
    let mut out: Vec<ConvexRegion> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..MAX_REGION_RETRIES {
            let cand = sample_ball(field, diameter, rng)?;
            let ok = out.iter().all(|r| match (r, &cand) {
                (
                    ConvexRegion::Ball { center: c1, radius: r1 },
                    ConvexRegion::Ball { center: c2, radius: r2 },
                ) => dist(c1, c2) >= r1 + r2,
                _ => false,
            });
            if ok {
                out.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Ok(None);
        }
    }
    Ok(Some(out))
}

/// Largest `Vol(T)/δ^{d−1}` over the field, by Monte-Carlo in each tube's bounding ball.
pub fn tube_volume_constant(field: &RepresentationField, samples_per_tube: usize, rng: &mut Rng) -> Result<f64> {
    ensure!(samples_per_tube >= 1, Precondition, "need at least one sample");
    let (d, delta) = (field.dim(), field.delta());
    let mut best: f64 = 0.0;
    for tube in &field.tubes {
        let (c, r) = bounding_ball(tube);
        let mut hit = 0usize;
        for _ in 0..samples_per_tube {
            let x = uniform_in_ball(&c, r, rng)?;
            if point_trajectory_distance(&x, &tube.trajectory)? < delta {
                hit += 1;
            }
        }
        let ln_vol = ln_ball_volume(d, r)? + (hit as f64 / samples_per_tube as f64).ln();
        best = best.max((ln_vol - (d as f64 - 1.0) * delta.ln()).exp());
    }
    Ok(best)
}

fn bounding_ball(tube: &Tube) -> (Vec<f64>, f64) {
    let v = tube.trajectory.vertices();
    let d = v[0].len();
    let c: Vec<f64> = (0..d).map(|j| v.iter().map(|p| p[j]).sum::<f64>() / v.len() as f64).collect();
    let r = v
        .iter()
        .map(|p| dist(p, &c))
        .fold(0.0, f64::max);
    (c, r + tube.delta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackingReport {
    pub disjoint_sum: VerificationReport,
    pub multiplicity: VerificationReport,
    pub c_t: f64,
}

/// Packing over disjoint balls and the average-multiplicity bound inside each ball.
pub fn verify_packing(
    field: &RepresentationField,
    n_regions: usize,
    c_a_assumed: f64,
    eps: f64,
    mc_points: usize,
    rng: &mut Rng,
) -> Result<PackingReport> {
    verify_packing_with(field, n_regions, c_a_assumed, eps, mc_points, rng, &CheckOptions::default())
}

pub fn verify_packing_with(
    field: &RepresentationField,
    n_regions: usize,
    c_a_assumed: f64,
    eps: f64,
    mc_points: usize,
    rng: &mut Rng,
    opts: &CheckOptions,
) -> Result<PackingReport> {
    ensure!(c_a_assumed >= 0.0, Precondition, "C_A must be >= 0");
    ensure!(eps > 0.0, Precondition, "eps must be > 0");
    let (d, delta, n) = (field.dim() as f64, field.delta(), field.len() as f64);
    let params = json!({"n_regions": n_regions, "c_a": c_a_assumed, "eps": eps, "mc_points": mc_points});
    let regions = sample_disjoint_balls(field, n_regions, rng)?;
    let mut sum_t = Tally::new("packing_disjoint", false, params.clone(), opts);
    let ln_scale = c_a_assumed.ln() + eps * n.ln() - (d - 1.0) * delta.ln();
    let mut total = 0usize;
    let mut ln_vols = Vec::with_capacity(regions.len());
    for r in &regions {
        total += tube_count_in_region(field, r)?.count;
        ln_vols.push(r.ln_volume()?);
    }
    let m = ln_vols.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ln_sum = m + ln_vols.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    sum_t.trial();
    sum_t.check(total as f64, (ln_scale + ln_sum).exp(), || json!({"count": total}));

    let c_t = tube_volume_constant(field, mc_points.max(1), rng)?;
    let mut mult_t = Tally::new("packing_multiplicity", false, params, opts);
    mult_t.note("c_T measured by Monte-Carlo; multiplicity bound is convention-dependent on F(v, n) = n");
    let bound = c_t * c_a_assumed * n.powf(eps);
    for (k, r) in regions.iter().enumerate() {
        let ConvexRegion::Ball { center, radius } = r else { unreachable!() };
        let inside: Vec<&Tube> = field
            .tubes
            .iter()
            .filter(|t| t.trajectory.vertices().iter().all(|v| r.contains_with_margin(v, delta)))
            .collect();
        let mut acc = 0usize;
        for _ in 0..mc_points {
            let x = uniform_in_ball(center, *radius, rng)?;
            for t in &inside {
                if point_trajectory_distance(&x, &t.trajectory)? < delta {
                    acc += 1;
                }
            }
        }
        let avg = acc as f64 / mc_points.max(1) as f64;
        mult_t.trial();
        mult_t.check(avg, bound, || json!({"region": k, "tubes_inside": inside.len()}));
    }
    Ok(PackingReport {
        disjoint_sum: sum_t.finish(),
        multiplicity: mult_t.finish(),
        c_t,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub lambdas: Vec<f64>,
    pub lambda_out: f64,
    /// `Λ_out Π(1 + Λ_l)`.
    pub chain_bound: f64,
    pub calibration: VerificationReport,
    pub holdout: VerificationReport,
}

/// Calibrates per-block constants on random pairs, then checks the end-to-end
/// chain `‖Δ^(L)‖ ≤ Π(1+Λ_l) ‖Δ^(0)‖` on fresh held-out pairs.
pub fn verify_lipschitz(
    params: &Params,
    base_states: &[Tensor],
    n_calibration: usize,
    n_holdout: usize,
    rng: &mut Rng,
) -> Result<LipschitzReport> {
    verify_lipschitz_with(params, base_states, n_calibration, n_holdout, rng, &CheckOptions::default())
}

pub fn verify_lipschitz_with(
    params: &Params,
    base_states: &[Tensor],
    n_calibration: usize,
    n_holdout: usize,
    rng: &mut Rng,
    opts: &CheckOptions,
) -> Result<LipschitzReport> {
    ensure!(!base_states.is_empty(), Precondition, "no base states");
    ensure!(n_calibration >= 1, Precondition, "need calibration pairs");
    let layers = params.config.n_layers;
    let pj = json!({"n_calibration": n_calibration, "n_holdout": n_holdout, "scales": LIPSCHITZ_SCALES});
    let mut per_layer: Vec<Vec<Tensor>> = vec![base_states.to_vec()];
    for l in 0..layers {
        let next = per_layer[l]
            .iter()
            .map(|z| block_forward(params, l, z))
            .collect::<Result<Vec<_>>>()?;
        per_layer.push(next);
    }
    let mut cal = Tally::new("lipschitz_calibration", true, pj.clone(), opts);
    let mut lambdas = Vec::with_capacity(layers);
    for (l, bases) in per_layer.iter().take(layers).enumerate() {
        let est = estimate_layer_lipschitz(params, l, bases, n_calibration, rng)?;
        // Each calibration ratio r gives ‖Δ_out‖ ≤ (1 + r)‖Δ_in‖ ≤ (1 + Λ_l)‖Δ_in‖.
        for r in &est.ratios {
            cal.trial();
            cal.check(1.0 + r, 1.0 + est.lambda, || json!({"layer": l}));
        }
        lambdas.push(est.lambda);
    }
    let finals = &per_layer[layers];
    let out = crate::geometry::estimate_lipschitz(
        |z| readout(params, z),
        finals,
        &LIPSCHITZ_SCALES,
        n_calibration,
        rng,
    )?;
    let growth = lipschitz_chain_bound(&lambdas, 1.0)?;
    let mut hold = Tally::new("lipschitz_holdout", false, pj, opts);
    for k in 0..n_holdout {
        let i = rng.below(base_states.len());
        let z0 = &base_states[i];
        let s = LIPSCHITZ_SCALES[rng.below(LIPSCHITZ_SCALES.len())];
        let z1 = perturb_state(z0, s * z0.frobenius_norm(), rng);
        let din = z1.sub(z0)?.frobenius_norm();
        if din == 0.0 {
            continue;
        }
        let dout = propagate(params, 0, &z1)?.sub(&finals[i])?.frobenius_norm();
        hold.trial();
        hold.check(dout, growth * din, || json!({"pair": k, "scale": s}));
    }
    Ok(LipschitzReport {
        chain_bound: lipschitz_chain_bound(&lambdas, out.lambda)?,
        lambdas,
        lambda_out: out.lambda,
        calibration: cal.finish(),
        holdout: hold.finish(),
    })
}
