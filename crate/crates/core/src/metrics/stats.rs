use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numcore::special::student_t_two_sided_p;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (divides by `n − 1`).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standardized mean difference with the pooled sample standard deviation.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure!(a.len() >= 2 && b.len() >= 2, Input, "each sample needs at least 2 values");
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / (na + nb - 2.0)).sqrt();
    ensure!(pooled > 0.0, Undefined, "pooled standard deviation is zero");
    Ok((mean(a) - mean(b)) / pooled)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Welch's unequal-variance t test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    ensure!(a.len() >= 2 && b.len() >= 2, Input, "each sample needs at least 2 values");
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a) / na, sample_variance(b) / nb);
    ensure!(va + vb > 0.0, Undefined, "both samples have zero variance");
    let t = (mean(a) - mean(b)) / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(WelchResult {
        t,
        df,
        p: student_t_two_sided_p(t, df),
    })
}

/// Two-sided Welch p-value.
pub fn welch_p(a: &[f64], b: &[f64]) -> Result<f64> {
    welch_t(a, b).map(|r| r.p)
}
