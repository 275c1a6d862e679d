use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numcore::{dot, Tensor};

/// Piecewise-linear path through depth with vertex `l` at time `l / L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    vertices: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn from_states(states: &[Vec<f64>]) -> Result<Self> {
        ensure!(states.len() >= 2, Input, "a trajectory needs at least 2 layers, got {}", states.len());
        let d = states[0].len();
        ensure!(d >= 1, Input, "zero-dimensional states");
        ensure!(states.iter().all(|s| s.len() == d), Shape, "inconsistent state dimension");
        Ok(Self {
            vertices: states.to_vec(),
        })
    }

    /// Trajectory that stays at one point (an instantaneous slice).
    pub fn stationary(point: &[f64]) -> Result<Self> {
        Self::from_states(&[point.to_vec(), point.to_vec()])
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn n_segments(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn time(&self, l: usize) -> f64 {
        l as f64 / self.n_segments() as f64
    }

    /// Position at `t ∈ [0, 1]` (clamped).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let n = self.n_segments();
        let s = t.clamp(0.0, 1.0) * n as f64;
        let l = (s.floor() as usize).min(n - 1);
        let frac = s - l as f64;
        if frac == 0.0 {
            return self.vertices[l].clone();
        }
        if frac == 1.0 {
            return self.vertices[l + 1].clone();
        }
        self.vertices[l]
            .iter()
            .zip(&self.vertices[l + 1])
            .map(|(a, b)| a + frac * (b - a))
            .collect()
    }

    fn segments(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.vertices.windows(2).map(|w| (w[0].as_slice(), w[1].as_slice()))
    }
}

/// δ-neighbourhood of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub trajectory: Trajectory,
    pub delta: f64,
}

impl Tube {
    pub fn new(trajectory: Trajectory, delta: f64) -> Result<Self> {
        ensure!(delta > 0.0 && delta.is_finite(), Input, "tube radius must be > 0, got {delta}");
        Ok(Self { trajectory, delta })
    }
}

/// One tube per token, sharing a radius and dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationField {
    pub tubes: Vec<Tube>,
    pub layer: Option<usize>,
}

impl RepresentationField {
    pub fn new(tubes: Vec<Tube>, layer: Option<usize>) -> Result<Self> {
        ensure!(!tubes.is_empty(), Input, "empty representation field");
        let (d, delta) = (tubes[0].trajectory.dim(), tubes[0].delta);
        ensure!(
            tubes.iter().all(|t| t.trajectory.dim() == d && t.delta == delta),
            Input,
            "tubes must share dimension and radius"
        );
        Ok(Self { tubes, layer })
    }

    /// Field of full trajectories from per-layer `N×d` states.
    pub fn from_layers(hidden: &[Tensor], delta: f64) -> Result<Self> {
        ensure!(!hidden.is_empty(), Input, "no layers");
        let n = hidden[0].rows();
        ensure!(hidden.iter().all(|h| h.rows() == n), Shape, "layers disagree on token count");
        let tubes = (0..n)
            .map(|i| {
                let states: Vec<Vec<f64>> = hidden.iter().map(|h| h.row(i).to_vec()).collect();
                Tube::new(Trajectory::from_states(&states)?, delta)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(tubes, None)
    }

    /// Instantaneous slice: one ball of radius δ per token state of a single layer.
    pub fn instantaneous(states: &Tensor, layer: usize, delta: f64) -> Result<Self> {
        let tubes = (0..states.rows())
            .map(|i| Tube::new(Trajectory::stationary(states.row(i))?, delta))
            .collect::<Result<Vec<_>>>()?;
        Self::new(tubes, Some(layer))
    }

    pub fn len(&self) -> usize {
        self.tubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tubes.is_empty()
    }

    pub fn delta(&self) -> f64 {
        self.tubes[0].delta
    }

    pub fn dim(&self) -> usize {
        self.tubes[0].trajectory.dim()
    }

    /// Largest distance between any two trajectory vertices.
    pub fn diameter(&self) -> f64 {
        let pts: Vec<&Vec<f64>> = self.tubes.iter().flat_map(|t| t.trajectory.vertices()).collect();
        let mut best: f64 = 0.0;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                best = best.max(dist(pts[i], pts[j]));
            }
        }
        best
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance from `x` to the segment `[a, b]`.
pub fn point_segment_distance(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(p, q)| q - p).collect();
    let ax: Vec<f64> = a.iter().zip(x).map(|(p, q)| q - p).collect();
    let len2 = dot(&ab, &ab);
    let t = if len2 > 0.0 { (dot(&ax, &ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    ax.iter().zip(&ab).map(|(p, q)| (p - t * q).powi(2)).sum::<f64>().sqrt()
}

/// Distance from `x` to the nearest point of the trajectory.
pub fn point_trajectory_distance(x: &[f64], traj: &Trajectory) -> Result<f64> {
    ensure!(x.len() == traj.dim(), Shape, "point dimension {} vs {}", x.len(), traj.dim());
    Ok(traj
        .segments()
        .map(|(a, b)| point_segment_distance(x, a, b))
        .fold(f64::INFINITY, f64::min))
}

/// Minimum distance between segments `[p0, p1]` and `[q0, q1]` in any dimension.
pub fn segment_segment_distance(p0: &[f64], p1: &[f64], q0: &[f64], q1: &[f64]) -> f64 {
    let d1: Vec<f64> = p0.iter().zip(p1).map(|(a, b)| b - a).collect();
    let d2: Vec<f64> = q0.iter().zip(q1).map(|(a, b)| b - a).collect();
    let r: Vec<f64> = q0.iter().zip(p0).map(|(a, b)| b - a).collect();
    let a = dot(&d1, &d1);
    let e = dot(&d2, &d2);
    let f = dot(&d2, &r);
    let (s, t);
    if a <= f64::EPSILON && e <= f64::EPSILON {
        return dist(p0, q0);
    }
    if a <= f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = dot(&d1, &r);
        if e <= f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = dot(&d1, &d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 0.0 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    p0.iter()
        .zip(&d1)
        .zip(q0.iter().zip(&d2))
        .map(|((p, dp), (q, dq))| (p + s * dp - q - t * dq).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Minimum distance between two trajectories.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    let mut best = f64::INFINITY;
    for (p0, p1) in a.segments() {
        for (q0, q1) in b.segments() {
            best = best.min(segment_segment_distance(p0, p1, q0, q1));
        }
    }
    best
}

/// Absolute slack under which a distance equal to `2δ` still counts as touching.
pub const TIE_TOL: f64 = 1e-12;

/// Footprints meet iff the trajectories come closer than `2δ` (ties count as meeting).
pub fn tubes_intersect(a: &Tube, b: &Tube) -> Result<bool> {
    ensure!(a.trajectory.dim() == b.trajectory.dim(), Shape, "tube dimensions differ");
    ensure!(a.delta == b.delta, Input, "tube radii differ");
    let d = trajectory_distance(&a.trajectory, &b.trajectory);
    Ok(d < 2.0 * a.delta + TIE_TOL)
}
