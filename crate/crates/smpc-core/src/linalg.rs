//! Small dense linear-algebra helpers shared across the crate.

use crate::{Error, Matrix, Result, Vector};

/// Lower-triangular Cholesky factor of a symmetric positive semidefinite
/// matrix, with a jitter ladder for slightly indefinite inputs.
///
/// Tries `S S^T = sigma + jitter*I` with jitter in
/// `{0, 1e-12, 1e-9, 1e-6} * tr(sigma)/n` and returns the factor for the
/// smallest jitter that succeeds. Exact zero pivots (degenerate directions)
/// are accepted as long as the remaining column is consistent.
pub fn cholesky_psd(sigma: &Matrix) -> Result<Matrix> {
    let n = sigma.nrows();
    if sigma.ncols() != n {
        return Err(Error::Dimension(format!(
            "covariance must be square, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let scale = sigma.trace().abs().max(f64::MIN_POSITIVE) / n as f64;
    let mut worst = f64::INFINITY;
    for jitter_rel in [0.0, 1e-12, 1e-9, 1e-6] {
        let jitter = jitter_rel * scale;
        match try_cholesky(sigma, jitter) {
            Ok(l) => return Ok(l),
            Err(pivot) => worst = worst.min(pivot),
        }
    }
    Err(Error::IndefiniteCovariance { min_pivot: worst })
}

/// One factorization attempt; on failure returns the offending pivot.
fn try_cholesky(sigma: &Matrix, jitter: f64) -> std::result::Result<Matrix, f64> {
    let n = sigma.nrows();
    let mut l = Matrix::zeros(n, n);
    // Absolute tolerance for treating a pivot as exactly zero.
    let diag_scale = (0..n)
        .map(|i| sigma[(i, i)].abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let tol = 1e-14 * diag_scale;
    for j in 0..n {
        let mut d = sigma[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return Err(d);
        }
        if d <= tol {
            // Degenerate direction: the column below must vanish as well.
            l[(j, j)] = 0.0;
            for i in (j + 1)..n {
                let mut s = sigma[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > 1e3 * tol.max(1e-300) {
                    return Err(d - s.abs());
                }
                l[(i, j)] = 0.0;
            }
            continue;
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut s = sigma[(i, j)] + if i == j { jitter } else { 0.0 };
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Ok(l)
}

/// In-place symmetrization `(a + a^T)/2`.
pub fn symmetrize(a: &mut Matrix) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Central-difference step for component `x`: `sqrt(eps) * (1 + |x|)`.
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.sqrt() * (1.0 + x.abs())
}

/// Eigen-decomposition of a symmetric tridiagonal matrix by the implicit QL
/// algorithm with Wilkinson shift.
///
/// `diag` holds the diagonal (length n), `off` the sub-diagonal (length n-1).
/// Returns eigenvalues (ascending) paired with the first component of each
/// normalized eigenvector, which is all Golub-Welsch quadrature needs.
pub fn symtridiag_eigen(diag: &[f64], off: &[f64]) -> Result<Vec<(f64, f64)>> {
    let n = diag.len();
    if n == 0 {
        return Err(Error::ParameterDomain("empty tridiagonal matrix".into()));
    }
    if off.len() + 1 != n {
        return Err(Error::Dimension(format!(
            "off-diagonal length {} does not match size {}",
            off.len(),
            n
        )));
    }
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(0.0);
    // First row of the accumulated rotation matrix.
    let mut z = vec![0.0; n];
    z[0] = 1.0;

    for l in 0..n {
        let mut iter = 0;
        loop {
            // Find a negligible off-diagonal element.
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::ParameterDomain(
                    "tridiagonal QL iteration failed to converge".into(),
                ));
            }
            // Wilkinson shift.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let r0 = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r0.copysign(g));
            let (mut s, mut c) = (1.0f64, 1.0f64);
            let mut p = 0.0f64;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                let r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                let t = (d[i] - g) * s + 2.0 * c * b;
                p = s * t;
                d[i + 1] = g + p;
                g = c * t - b;
                // Accumulate the first row of the eigenvector matrix.
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut pairs: Vec<(f64, f64)> = d.into_iter().zip(z).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs)
}

/// Weighted mean of matrix columns: `sum_i w_i * points[:, i]`.
pub fn weighted_column_mean(points: &Matrix, w: &[f64]) -> Vector {
    let mut mean = Vector::zeros(points.nrows());
    for (i, wi) in w.iter().enumerate() {
        mean.axpy(*wi, &points.column(i), 1.0);
    }
    mean
}

/// Weighted cross-scatter `sum_i w_i (a_i - mu_a)(b_i - mu_b)^T` over columns.
pub fn weighted_cross_scatter(
    a: &Matrix,
    mu_a: &Vector,
    b: &Matrix,
    mu_b: &Vector,
    w: &[f64],
) -> Matrix {
    let mut out = Matrix::zeros(a.nrows(), b.nrows());
    for (i, wi) in w.iter().enumerate() {
        let da = a.column(i) - mu_a;
        let db = b.column(i) - mu_b;
        out.ger(*wi, &da, &db, 1.0);
    }
    out
}
