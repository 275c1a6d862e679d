//! Symmetric eigendecomposition (cyclic Jacobi) and an SVD built on it.

use super::tensor::{dot, norm, Tensor};
use crate::error::{ensure, Result};

/// Off-diagonal Frobenius norm, relative to the input norm, at which Jacobi stops.
pub const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

#[derive(Clone, Debug)]
pub struct Eigh {
    /// Descending.
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector for `values[k]`.
    pub vectors: Tensor,
}

#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Tensor,
    /// Descending, nonnegative; length `min(m, n)`.
    pub sigma: Vec<f64>,
    pub v: Tensor,
}

pub fn check_symmetric(m: &Tensor) -> Result<()> {
    ensure!(m.is_square(), Precondition, "matrix {:?} is not square", m.shape());
    let n = m.rows();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (m.at(i, j) - m.at(j, i)).abs();
            ensure!(
                diff <= 1e-10 * scale,
                Precondition,
                "matrix not symmetric at ({i},{j}): {} vs {}",
                m.at(i, j),
                m.at(j, i)
            );
        }
    }
    Ok(())
}

/// Eigenvalues (descending) and orthonormal eigenvectors of a symmetric matrix.
pub fn sym_eigh(m: &Tensor) -> Result<Eigh> {
    check_symmetric(m)?;
    m.check_finite("sym_eigh input")?;
    Ok(jacobi_eigh(m))
}

fn jacobi_eigh(m: &Tensor) -> Eigh {
    let n = m.rows();
    let mut a = m.data().to_vec();
    // Symmetrize exactly; the check above allows 1e-10 drift.
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = s;
            a[j * n + i] = s;
        }
    }
    let mut v = Tensor::identity(n).into_data();
    let total = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let stop = JACOBI_TOL * total.max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A ← Jᵀ A J, applied to rows/cols p and q.
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (k, &src) in order.iter().enumerate() {
        // Sign convention: largest-magnitude component positive.
        let col: Vec<f64> = (0..n).map(|r| v[r * n + src]).collect();
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (r, x) in col.iter().enumerate() {
            vectors.set(r, k, sign * x);
        }
    }
    Eigh { values, vectors }
}

/// Thin-plus-complete SVD via the eigendecomposition of `AᵀA`.
///
/// `u` is `m×m`, `v` is `n×n`, `sigma` has `min(m, n)` entries. Singular values
/// below `1e-12·σ_max` are treated as zero and their left vectors are filled in
/// by orthogonal completion.
pub fn svd(a: &Tensor) -> Result<Svd> {
    a.check_finite("svd input")?;
    ensure!(a.shape().len() == 2, Precondition, "svd needs a matrix");
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        // Work on the transpose so the Gram matrix is the small side.
        let t = svd(&a.transpose())?;
        return Ok(Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }
    let gram = a.transpose().matmul(a)?;
    let eig = jacobi_eigh(&gram);
    // ‖A v_j‖ is accurate to roundoff of ‖A‖ even where sqrt(λ_j) of the Gram matrix is not.
    let av0 = a.matmul(&eig.vectors)?;
    let norms: Vec<f64> = (0..n).map(|j| norm(&av0.column(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let v = eig.vectors.select_cols(&order);
    let av = av0.select_cols(&order);
    let k = n;
    let mut sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let smax = sigma.first().copied().unwrap_or(0.0);
    let cutoff = 1e-12 * smax;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    for j in 0..k {
        if sigma[j] > cutoff && sigma[j] > 0.0 {
            let mut col: Vec<f64> = (0..m).map(|i| av.at(i, j) / sigma[j]).collect();
            // Re-orthogonalize against earlier columns; AᵀA squares the condition number.
            for prev in &u_cols {
                let c = dot(&col, prev);
                col.iter_mut().zip(prev).for_each(|(x, p)| *x -= c * p);
            }
            let nn = norm(&col);
            if nn > 1e-8 {
                col.iter_mut().for_each(|x| *x /= nn);
                u_cols.push(col);
                continue;
            }
        }
        sigma[j] = if sigma[j] > cutoff { sigma[j] } else { 0.0 };
        u_cols.push(complete_column(&u_cols, m));
    }
    while u_cols.len() < m {
        let c = complete_column(&u_cols, m);
        u_cols.push(c);
    }
    let mut u = Tensor::zeros(&[m, m]);
    for (j, col) in u_cols.iter().enumerate() {
        for (i, x) in col.iter().enumerate() {
            u.set(i, j, *x);
        }
    }
    Ok(Svd { u, sigma, v })
}

/// A unit vector orthogonal to every column in `basis` (Gram–Schmidt over e_i).
fn complete_column(basis: &[Vec<f64>], m: usize) -> Vec<f64> {
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let c = dot(&e, b);
                e.iter_mut().zip(b).for_each(|(x, p)| *x -= c * p);
            }
        }
        let nn = norm(&e);
        if nn > 0.5 {
            e.iter_mut().for_each(|x| *x /= nn);
            return e;
        }
        if nn > best_norm {
            best_norm = nn;
            best = Some(e);
        }
    }
    let mut e = best.expect("basis already spans the space");
    e.iter_mut().for_each(|x| *x /= best_norm);
    e
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn spectral_norm_power(a: &Tensor, iters: usize) -> f64 {
    let n = a.cols();
    if n == 0 || a.rows() == 0 {
        return 0.0;
    }
    let gram = a.transpose().matmul(a).expect("square gram");
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let y: Vec<f64> = (0..n).map(|i| dot(gram.row(i), &x)).collect();
        let ny = norm(&y);
        if ny == 0.0 {
            return 0.0;
        }
        lambda = dot(&x, &y) / dot(&x, &x);
        x = y.into_iter().map(|v| v / ny).collect();
    }
    lambda.max(0.0).sqrt()
}

/// Orthonormal basis of the column span of `a` (modified Gram–Schmidt, rank-revealing).
pub fn orthonormal_columns(a: &Tensor, tol: f64) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..n {
        let mut c = a.column(j);
        for _ in 0..2 {
            for b in &cols {
                let p = dot(&c, b);
                c.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let nn = norm(&c);
        if nn > tol {
            c.iter_mut().for_each(|x| *x /= nn);
            cols.push(c);
        }
    }
    let mut out = Tensor::zeros(&[m, cols.len()]);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..m {
            out.set(i, j, c[i]);
        }
    }
    out
}
