//! Central finite-difference helpers for representations without an exact
//! chain rule.

use rayon::prelude::*;

use crate::linalg::fd_step;
use crate::{Error, Result, Vector};

/// Probe count above which the probes run on the thread pool.
const PAR_THRESHOLD: usize = 64;

fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::IndefiniteCovariance { .. } | Error::Propagation { .. }
    )
}

/// Central difference of `f` along coordinate `k`, falling back to a
/// one-sided difference when a probe leaves the feasible region (e.g. a
/// covariance block probed across the positive-semidefinite boundary).
fn directional<F, T, R>(f: &F, x: &Vector, k: usize, combine: impl Fn(T, T, f64) -> R) -> Result<R>
where
    F: Fn(&Vector) -> Result<T>,
{
    let h = fd_step(x[k]);
    let mut xp = x.clone();
    xp[k] = x[k] + h;
    let plus = f(&xp);
    xp[k] = x[k] - h;
    let minus = f(&xp);
    match (plus, minus) {
        (Ok(p), Ok(m)) => Ok(combine(p, m, 2.0 * h)),
        (Ok(p), Err(e)) if recoverable(&e) => {
            let center = f(x)?;
            Ok(combine(p, center, h))
        }
        (Err(e), Ok(m)) if recoverable(&e) => {
            let center = f(x)?;
            Ok(combine(center, m, h))
        }
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

/// `(dF/dx)^T lambda` by central differences, one probe pair per component.
///
/// Probes are independent and may run in parallel; the result is assembled
/// in index order and does not depend on scheduling.
pub(crate) fn fd_vjp<F>(f: F, x: &Vector, lambda: &Vector) -> Result<Vector>
where
    F: Fn(&Vector) -> Result<Vector> + Sync,
{
    let n = x.len();
    let probe = |k: usize| -> Result<f64> {
        directional(&f, x, k, |p: Vector, m: Vector, span: f64| {
            (p - m).dot(lambda) / span
        })
    };
    let entries: Vec<Result<f64>> = if n >= PAR_THRESHOLD {
        (0..n).into_par_iter().map(probe).collect()
    } else {
        (0..n).map(probe).collect()
    };
    let mut out = Vector::zeros(n);
    for (k, v) in entries.into_iter().enumerate() {
        out[k] = v?;
    }
    Ok(out)
}

/// Gradient of a scalar function by central differences.
pub(crate) fn fd_grad<F>(f: F, x: &Vector) -> Result<Vector>
where
    F: Fn(&Vector) -> Result<f64> + Sync,
{
    let n = x.len();
    let probe =
        |k: usize| -> Result<f64> { directional(&f, x, k, |p: f64, m: f64, span| (p - m) / span) };
    let entries: Vec<Result<f64>> = if n >= PAR_THRESHOLD {
        (0..n).into_par_iter().map(probe).collect()
    } else {
        (0..n).map(probe).collect()
    };
    let mut out = Vector::zeros(n);
    for (k, v) in entries.into_iter().enumerate() {
        out[k] = v?;
    }
    Ok(out)
}

/// Row-wise gradients of a vector function by central differences,
/// returning an `m x n` Jacobian.
pub(crate) fn fd_jacobian<F>(f: F, x: &Vector, m: usize) -> Result<crate::Matrix>
where
    F: Fn(&Vector) -> Result<Vector> + Sync,
{
    let n = x.len();
    let probe = |k: usize| -> Result<Vector> {
        directional(&f, x, k, |p: Vector, mi: Vector, span| (p - mi) / span)
    };
    let cols: Vec<Result<Vector>> = if n >= PAR_THRESHOLD {
        (0..n).into_par_iter().map(probe).collect()
    } else {
        (0..n).map(probe).collect()
    };
    let mut jac = crate::Matrix::zeros(m, n);
    for (k, col) in cols.into_iter().enumerate() {
        jac.column_mut(k).copy_from(&col?);
    }
    Ok(jac)
}
