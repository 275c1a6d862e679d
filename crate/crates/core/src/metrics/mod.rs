//! Spectra, isotropy scores, stability and two-sample statistics.

mod stats;

pub use stats::{cohens_d, mean, sample_variance, welch_p, welch_t, WelchResult};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::model::ForwardTrace;
use crate::numcore::{norm, sym_eigh, Tensor};

/// Default number of token states sampled per layer for spectra.
pub const DEFAULT_SPECTRUM_SAMPLE: usize = 5000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub total_variance: f64,
    pub top_k_fractions: BTreeMap<usize, f64>,
}

impl SpectrumReport {
    pub fn from_eigenvalues(mut eigenvalues: Vec<f64>) -> Self {
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = eigenvalues.iter().map(|l| l.max(0.0)).sum();
        let mut fractions = BTreeMap::new();
        let mut acc = 0.0;
        for (k, l) in eigenvalues.iter().enumerate() {
            acc += l.max(0.0);
            let f = if total > 0.0 { (acc / total).min(1.0) } else { 0.0 };
            fractions.insert(k + 1, f);
        }
        Self {
            eigenvalues,
            total_variance: total,
            top_k_fractions: fractions,
        }
    }

    pub fn top_k(&self, k: usize) -> f64 {
        let k = k.min(self.eigenvalues.len());
        self.top_k_fractions.get(&k).copied().unwrap_or(0.0)
    }
}

/// Eigen-spectrum of the (optionally centred) second-moment matrix of the rows.
pub fn covariance_spectrum(points: &Tensor, center: bool) -> Result<SpectrumReport> {
    ensure!(points.rows() >= 2, Degenerate, "need at least 2 points, got {}", points.rows());
    let eig = sym_eigh(&points.second_moment(center))?;
    Ok(SpectrumReport::from_eigenvalues(eig.values))
}

fn centred_spectrum(points: &Tensor) -> Result<SpectrumReport> {
    let s = covariance_spectrum(points, true)?;
    ensure!(s.total_variance > 0.0, Degenerate, "zero total variance");
    Ok(s)
}

/// Share of centred variance carried by the top `k` eigenvalues.
pub fn cone_concentration(points: &Tensor, k: usize) -> Result<f64> {
    ensure!(k >= 1 && k <= points.cols(), Precondition, "k = {k} outside 1..={}", points.cols());
    Ok(centred_spectrum(points)?.top_k(k))
}

/// Isotropy score of a non-negative spectrum: 1 for equal eigenvalues, 0 for rank one.
pub fn isoscore_from_eigenvalues(lambda: &[f64]) -> Result<f64> {
    let d = lambda.len();
    ensure!(d >= 1, Degenerate, "empty spectrum");
    let l: Vec<f64> = lambda.iter().map(|x| x.max(0.0)).collect();
    let n = norm(&l);
    ensure!(n > 0.0, Degenerate, "zero variance");
    if d == 1 {
        return Ok(1.0);
    }
    let df = d as f64;
    let sd = df.sqrt();
    let defect2: f64 = l.iter().map(|x| (x * sd / n - 1.0).powi(2)).sum();
    let delta2 = defect2 / (2.0 * (df - sd));
    Ok((1.0 - delta2).clamp(0.0, 1.0))
}

/// [`isoscore_from_eigenvalues`] of the centred covariance of `points`.
pub fn isoscore(points: &Tensor) -> Result<f64> {
    isoscore_from_eigenvalues(&centred_spectrum(points)?.eigenvalues)
}

/// Smallest `k` whose top-`k` share of centred variance reaches `tau`.
pub fn pca_probe_efficiency(points: &Tensor, tau: f64) -> Result<usize> {
    ensure!(tau > 0.0 && tau <= 1.0, Precondition, "tau {tau} outside (0, 1]");
    let s = centred_spectrum(points)?;
    let d = s.eigenvalues.len();
    // Tolerance absorbs roundoff in the running sum at tau = 1.
    Ok((1..=d)
        .find(|&k| s.top_k(k) >= tau - 1e-12)
        .unwrap_or(d))
}

/// `Σ p ln(p/q)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    ensure!(p.len() == q.len(), Input, "support sizes {} and {} differ", p.len(), q.len());
    let mut s = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            ensure!(qi > 0.0, Undefined, "q vanishes where p > 0; divergence is infinite");
            s += pi * (pi / qi).ln();
        }
    }
    Ok(s.max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub kl_mean: f64,
    pub cos_mean: f64,
    pub stable_count: usize,
    pub total: usize,
    pub stability_rate: f64,
}

/// Row-wise softmax of a logits matrix.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    crate::numcore::dot(a, b) / (na * nb)
}

/// Output and representation drift between paired clean and perturbed passes.
///
/// An example is stable when its final-position top-1 prediction is unchanged.
pub fn stability_metrics(clean: &[ForwardTrace], perturbed: &[ForwardTrace]) -> Result<StabilityReport> {
    ensure!(
        clean.len() == perturbed.len(),
        Input,
        "{} clean traces vs {} perturbed",
        clean.len(),
        perturbed.len()
    );
    ensure!(!clean.is_empty(), Input, "no examples");
    let (mut kl_sum, mut kl_n, mut cos_sum, mut cos_n, mut stable) = (0.0, 0usize, 0.0, 0usize, 0usize);
    for (c, p) in clean.iter().zip(perturbed) {
        ensure!(
            c.logits.shape() == p.logits.shape() && c.hidden.len() == p.hidden.len(),
            Input,
            "paired traces differ in shape"
        );
        let (pc, pp) = (softmax_rows(&c.logits), softmax_rows(&p.logits));
        for i in 0..pc.rows() {
            kl_sum += kl_divergence(pc.row(i), pp.row(i))?;
            kl_n += 1;
        }
        let (hc, hp) = (c.hidden.last().expect("layers"), p.hidden.last().expect("layers"));
        for i in 0..hc.rows() {
            cos_sum += cosine(hc.row(i), hp.row(i));
            cos_n += 1;
        }
        let last = pc.rows() - 1;
        if argmax(c.logits.row(last)) == argmax(p.logits.row(last)) {
            stable += 1;
        }
    }
    Ok(StabilityReport {
        kl_mean: kl_sum / kl_n as f64,
        cos_mean: cos_sum / cos_n as f64,
        stable_count: stable,
        total: clean.len(),
        stability_rate: stable as f64 / clean.len() as f64,
    })
}
