use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::tube::{dist, RepresentationField};
use crate::error::{ensure, Result};
use crate::numcore::{dot, ln_ball_volume, norm, Rng};

/// Admissible convex region: a ball, or a cone with apex at the origin cut at a radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexRegion {
    Ball { center: Vec<f64>, radius: f64 },
    Cone { axis: Vec<f64>, aperture: f64, radius: f64 },
}

impl ConvexRegion {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        ensure!(radius > 0.0 && radius.is_finite(), Input, "ball radius must be > 0");
        Ok(Self::Ball { center, radius })
    }

    /// Cone `{x : ⟨x, v⟩ ≥ ‖x‖ cos Δ, ‖x‖ ≤ R}`; the axis is normalized.
    pub fn cone(axis: Vec<f64>, aperture: f64, radius: f64) -> Result<Self> {
        ensure!(radius > 0.0 && radius.is_finite(), Input, "cone radius must be > 0");
        ensure!(
            aperture > 0.0 && aperture < std::f64::consts::FRAC_PI_2,
            Input,
            "aperture {aperture} outside (0, pi/2)"
        );
        let n = norm(&axis);
        ensure!(n > 0.0, Degenerate, "zero cone axis");
        Ok(Self::Cone {
            axis: axis.iter().map(|x| x / n).collect(),
            aperture,
            radius,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Ball { center, .. } => center.len(),
            Self::Cone { axis, .. } => axis.len(),
        }
    }

    /// Natural log of the region's volume.
    pub fn ln_volume(&self) -> Result<f64> {
        match self {
            Self::Ball { center, radius } => ln_ball_volume(center.len(), *radius),
            Self::Cone { axis, aperture, radius } => {
                let d = axis.len();
                let ball = ln_ball_volume(d, *radius)?;
                if d == 1 {
                    return Ok(ball + 0.5f64.ln());
                }
                // Solid-angle share of a cap of half-angle Δ < π/2.
                let s = aperture.sin();
                let frac = 0.5 * beta_reg((d as f64 - 1.0) / 2.0, 0.5, s * s);
                Ok(ball + frac.ln())
            }
        }
    }

    /// Whether every point within `margin` of `x` lies in the region.
    pub fn contains_with_margin(&self, x: &[f64], margin: f64) -> bool {
        match self {
            Self::Ball { center, radius } => dist(x, center) <= radius - margin,
            Self::Cone { axis, aperture, radius } => {
                let r = norm(x);
                if r + margin > *radius {
                    return false;
                }
                if r == 0.0 {
                    return margin <= 0.0;
                }
                let cos_t = (dot(x, axis) / r).clamp(-1.0, 1.0);
                let theta = cos_t.acos();
                theta <= *aperture && r * (aperture - theta).sin() >= margin
            }
        }
    }
}

/// Count of unit rows `x_j` with `⟨x_j, v⟩ ≥ cos Δ`.
pub fn cone_count(points: &[Vec<f64>], v: &[f64], aperture: f64) -> Result<usize> {
    ensure!(
        aperture > 0.0 && aperture < std::f64::consts::FRAC_PI_2,
        Precondition,
        "aperture {aperture} outside (0, pi/2)"
    );
    let c = aperture.cos();
    Ok(points.iter().filter(|x| dot(x, v) >= c).count())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionCount {
    pub count: usize,
    /// Set when the region is too thin to hold any tube.
    pub note: Option<String>,
}

/// Number of tubes lying entirely inside `region`.
///
/// A tube is inside a ball iff every trajectory vertex is within `r − δ` of
/// the centre. For cones the same vertex test runs against the cone shrunk by
/// `δ`, which is exact for convex regions.
pub fn tube_count_in_region(field: &RepresentationField, region: &ConvexRegion) -> Result<RegionCount> {
    ensure!(region.dim() == field.dim(), Shape, "region dimension {} vs field {}", region.dim(), field.dim());
    let delta = field.delta();
    let thin = match region {
        ConvexRegion::Ball { radius, .. } | ConvexRegion::Cone { radius, .. } => *radius <= delta,
    };
    if thin {
        return Ok(RegionCount {
            count: 0,
            note: Some(format!("region radius does not exceed tube radius {delta}")),
        });
    }
    let count = field
        .tubes
        .iter()
        .filter(|t| {
            t.trajectory
                .vertices()
                .iter()
                .all(|v| region.contains_with_margin(v, delta))
        })
        .count();
    Ok(RegionCount { count, note: None })
}

/// Default exponent on the field size in the collapse bound.
pub const DEFAULT_EPS: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseEstimate {
    /// `max count·δ^{d−1} / (Vol(W)·n^ε)`; 0 when no sampled region holds a tube.
    pub c_a: f64,
    pub ln_c_a: f64,
    pub region: ConvexRegion,
    pub count: usize,
    pub n_regions: usize,
}

pub(crate) fn sample_ball(field: &RepresentationField, diameter: f64, rng: &mut Rng) -> Result<ConvexRegion> {
    let delta = field.delta();
    let t = &field.tubes[rng.below(field.len())];
    let verts = t.trajectory.vertices();
    let center = verts[rng.below(verts.len())].clone();
    let lo = 2.0 * delta;
    let hi = diameter.max(lo);
    let radius = (lo.ln() + rng.next_f64() * (hi.ln() - lo.ln())).exp();
    ConvexRegion::ball(center, radius)
}

/// `ln(count · δ^{d−1} / (Vol(W) · n^ε))`, or `-inf` for an empty region.
pub fn ln_collapse_ratio(field: &RepresentationField, region: &ConvexRegion, eps: f64) -> Result<(f64, usize)> {
    let count = tube_count_in_region(field, region)?.count;
    if count == 0 {
        return Ok((f64::NEG_INFINITY, 0));
    }
    let d = field.dim() as f64;
    let v = (count as f64).ln() + (d - 1.0) * field.delta().ln()
        - region.ln_volume()?
        - eps * (field.len() as f64).ln();
    Ok((v, count))
}

/// Lower-bound estimate of the collapse constant from randomly anchored balls.
///
/// Centres sit on random trajectory vertices and radii are log-uniform in
/// `[2δ, diameter]`.
pub fn estimate_collapse_constant(
    field: &RepresentationField,
    n_regions: usize,
    eps: f64,
    rng: &mut Rng,
) -> Result<CollapseEstimate> {
    ensure!(eps > 0.0, Precondition, "eps must be > 0");
    ensure!(n_regions >= 1, Precondition, "need at least one region");
    let diameter = field.diameter();
    let regions = (0..n_regions)
        .map(|_| sample_ball(field, diameter, rng))
        .collect::<Result<Vec<_>>>()?;
    collapse_over_regions(field, &regions, eps)
}

/// Maximum collapse ratio over a fixed list of regions.
pub fn collapse_over_regions(
    field: &RepresentationField,
    regions: &[ConvexRegion],
    eps: f64,
) -> Result<CollapseEstimate> {
    ensure!(!regions.is_empty(), Precondition, "no regions");
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for (k, r) in regions.iter().enumerate() {
        let (v, c) = ln_collapse_ratio(field, r, eps)?;
        if v > best.0 {
            best = (v, c, k);
        }
    }
    Ok(CollapseEstimate {
        c_a: best.0.exp(),
        ln_c_a: best.0,
        region: regions[best.2].clone(),
        count: best.1,
        n_regions: regions.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadVariance {
    pub counts: Vec<usize>,
    /// Population variance of the counts over heads.
    pub variance: f64,
    /// `variance / F(Vol(W), n)` with the normalizer in use.
    pub normalized: f64,
}

/// Normalizer `F(v, n) := n` applied to head-count variance.
pub fn default_normalizer(_ln_volume: f64, n_tubes: usize) -> f64 {
    n_tubes as f64
}

/// Variance over heads of the number of query tubes inside `region`.
pub fn head_count_variance(query_fields: &[RepresentationField], region: &ConvexRegion) -> Result<HeadVariance> {
    head_count_variance_with(query_fields, region, default_normalizer)
}

pub fn head_count_variance_with(
    query_fields: &[RepresentationField],
    region: &ConvexRegion,
    normalizer: impl Fn(f64, usize) -> f64,
) -> Result<HeadVariance> {
    ensure!(query_fields.len() >= 2, Input, "need at least 2 heads, got {}", query_fields.len());
    let counts = query_fields
        .iter()
        .map(|f| tube_count_in_region(f, region).map(|c| c.count))
        .collect::<Result<Vec<_>>>()?;
    let h = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / h;
    let mean_sq = counts.iter().map(|&c| (c as f64).powi(2)).sum::<f64>() / h;
    let variance = (mean_sq - mean * mean).max(0.0);
    let f = normalizer(region.ln_volume()?, query_fields[0].len());
    Ok(HeadVariance {
        counts,
        variance,
        normalized: if f > 0.0 { variance / f } else { 0.0 },
    })
}

/// Largest normalized head-count variance over randomly anchored balls.
pub fn estimate_head_constant(query_fields: &[RepresentationField], n_regions: usize, rng: &mut Rng) -> Result<f64> {
    ensure!(query_fields.len() >= 2, Input, "need at least 2 heads");
    ensure!(n_regions >= 1, Precondition, "need at least one region");
    let anchor = &query_fields[0];
    let diameter = query_fields.iter().map(|f| f.diameter()).fold(0.0, f64::max);
    let mut best: f64 = 0.0;
    for _ in 0..n_regions {
        let f = &query_fields[rng.below(query_fields.len())];
        let region = sample_ball(if f.len() > 0 { f } else { anchor }, diameter, rng)?;
        best = best.max(head_count_variance(query_fields, &region)?.normalized);
    }
    Ok(best)
}
