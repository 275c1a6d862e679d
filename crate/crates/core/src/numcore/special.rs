//! Ball volumes, the Student-t density and its tail by adaptive quadrature.

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

use crate::error::{ensure, Result};

/// Volume of the radius-`r` ball in `R^d`: π^{d/2} r^d / Γ(d/2 + 1).
pub fn ball_volume(d: usize, r: f64) -> Result<f64> {
    Ok(ln_ball_volume(d, r)?.exp())
}

/// Natural log of [`ball_volume`]; stays finite in high dimension.
pub fn ln_ball_volume(d: usize, r: f64) -> Result<f64> {
    ensure!(d >= 1, Precondition, "dimension must be >= 1");
    ensure!(r >= 0.0 && r.is_finite(), Precondition, "radius {r} must be >= 0");
    if r == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let h = d as f64 / 2.0;
    Ok(h * PI.ln() + d as f64 * r.ln() - ln_gamma(h + 1.0))
}

/// Density of Student's t with `nu` degrees of freedom (real-valued `nu` allowed).
pub fn student_t_pdf(t: f64, nu: f64) -> f64 {
    let ln_norm = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * PI).ln();
    (ln_norm - (nu + 1.0) / 2.0 * (1.0 + t * t / nu).ln()).exp()
}

/// Two-sided tail probability P(|T| ≥ |t|) by adaptive Simpson integration of the density.
///
/// Integrates over `[0, |t|]` and returns `1 − 2∫`, switching to the
/// substitution `t = tan θ` for the tail when `|t|` is large so the
/// integrand stays on a bounded interval.
pub fn student_t_two_sided_p(t: f64, nu: f64) -> f64 {
    let a = t.abs();
    if a == 0.0 {
        return 1.0;
    }
    // Upper tail ∫_a^∞ f(x) dx = ∫_{atan a}^{π/2} f(tan θ) sec²θ dθ.
    let lo = a.atan();
    let hi = PI / 2.0;
    let g = |theta: f64| {
        if theta >= hi {
            return 0.0;
        }
        let c = theta.cos();
        student_t_pdf(theta.tan(), nu) / (c * c)
    };
    let tail = adaptive_simpson(&g, lo, hi, 1e-14, 60);
    (2.0 * tail).clamp(0.0, 1.0)
}

/// Adaptive Simpson quadrature with an absolute tolerance.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_balls() {
        assert!((ball_volume(2, 1.0).unwrap() - PI).abs() < 1e-12);
        assert!((ball_volume(3, 1.0).unwrap() - 4.0 * PI / 3.0).abs() < 1e-12);
        assert!((ball_volume(1, 2.0).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ball_volume_rejects_bad_input() {
        assert!(ball_volume(0, 1.0).is_err());
        assert!(ball_volume(3, -1.0).is_err());
        assert_eq!(ball_volume(3, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn high_dimension_log_volume_is_finite() {
        let lv = ln_ball_volume(512, 0.5).unwrap();
        assert!(lv.is_finite() && lv < 0.0);
    }

    #[test]
    fn t_density_integrates_to_one() {
        let p = student_t_two_sided_p(1e-300, 3.5);
        assert!((p - 1.0).abs() < 1e-10);
    }

    #[test]
    fn t_tail_matches_statrs() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        for &(t, nu) in &[(0.5, 2.0), (2.3, 5.7), (10.0, 3.0), (1.1, 30.0)] {
            let d = StudentsT::new(0.0, 1.0, nu).unwrap();
            let reference = 2.0 * (1.0 - d.cdf(t));
            let p = student_t_two_sided_p(t, nu);
            assert!((p - reference).abs() < 1e-9, "t={t} nu={nu}: {p} vs {reference}");
        }
    }
}
