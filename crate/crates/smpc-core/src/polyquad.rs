//! Orthogonal polynomial families and Gaussian quadrature rules.
//!
//! Two families are provided, each orthogonal under a normalized probability
//! density: probabilists' Hermite polynomials under the standard normal on
//! the real line, and Legendre polynomials under the uniform density 1/2 on
//! `[-1, 1]`. Nodes and weights come from the Golub-Welsch construction on
//! the symmetric Jacobi tridiagonal matrix.

use crate::linalg::symtridiag_eigen;
use crate::{Error, Matrix, Result, Vector};

/// Maximum supported 1-D quadrature order.
pub const MAX_ORDER: usize = 64;

/// Orthogonal polynomial family together with its implied density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolynomialFamily {
    /// Probabilists' Hermite polynomials, standard normal weight on R.
    HermiteProbabilists,
    /// Legendre polynomials, uniform density 1/2 on [-1, 1].
    Legendre,
}

/// Evaluates the degree-`n` polynomial of `family` at `x` via the three-term
/// recurrence.
pub fn poly_eval(family: PolynomialFamily, n: usize, x: f64) -> f64 {
    match family {
        PolynomialFamily::HermiteProbabilists => {
            // He_{n+1} = x He_n - n He_{n-1}
            let (mut prev, mut cur) = (1.0, x);
            if n == 0 {
                return 1.0;
            }
            for k in 1..n {
                let next = x * cur - k as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
        PolynomialFamily::Legendre => {
            // (n+1) P_{n+1} = (2n+1) x P_n - n P_{n-1}
            let (mut prev, mut cur) = (1.0, x);
            if n == 0 {
                return 1.0;
            }
            for k in 1..n {
                let kf = k as f64;
                let next = ((2.0 * kf + 1.0) * x * cur - kf * prev) / (kf + 1.0);
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Squared norm of the degree-`n` polynomial under the normalized family
/// density: `n!` for Hermite, `1/(2n+1)` for Legendre.
pub fn norm_squared(family: PolynomialFamily, n: usize) -> f64 {
    match family {
        PolynomialFamily::HermiteProbabilists => (1..=n).map(|k| k as f64).product(),
        PolynomialFamily::Legendre => 1.0 / (2.0 * n as f64 + 1.0),
    }
}

/// 1-D Gaussian quadrature rule in standardized coordinates.
///
/// Weights sum to one since the family density is normalized; a rule of
/// order `d` integrates polynomials up to degree `2d-1` exactly.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Polynomial family the rule belongs to.
    pub family: PolynomialFamily,
    /// Nodes in strictly increasing order.
    pub nodes: Vec<f64>,
    /// Weights matching the nodes.
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Order (number of nodes) of the rule.
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Applies the rule to a scalar function of the standardized variable.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Builds the order-`d` Gaussian rule of `family` by Golub-Welsch.
pub fn gauss_rule(family: PolynomialFamily, d: usize) -> Result<QuadratureRule> {
    if d == 0 || d > MAX_ORDER {
        return Err(Error::ParameterDomain(format!(
            "quadrature order must lie in [1, {MAX_ORDER}], got {d}"
        )));
    }
    let diag = vec![0.0; d];
    let off: Vec<f64> = match family {
        // beta_k = k  =>  off-diagonal sqrt(k)
        PolynomialFamily::HermiteProbabilists => (1..d).map(|k| (k as f64).sqrt()).collect(),
        // beta_k = k^2/(4k^2 - 1)  =>  off-diagonal k/sqrt(4k^2 - 1)
        PolynomialFamily::Legendre => (1..d)
            .map(|k| {
                let kf = k as f64;
                kf / (4.0 * kf * kf - 1.0).sqrt()
            })
            .collect(),
    };
    let pairs = symtridiag_eigen(&diag, &off)?;
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1 * p.1).collect();

    // Both families are symmetric; average mirrored nodes and weights to
    // remove the last few ulps of asymmetry from the eigen iteration.
    for i in 0..d / 2 {
        let j = d - 1 - i;
        let x = 0.5 * (nodes[i] - nodes[j]);
        nodes[i] = x;
        nodes[j] = -x;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if d % 2 == 1 {
        nodes[d / 2] = 0.0;
    }
    Ok(QuadratureRule {
        family,
        nodes,
        weights,
    })
}

/// Tensor-product quadrature rule over several dimensions.
///
/// Points are stored as columns of an `N x Np` matrix in lexicographic order
/// with the last dimension varying fastest; weights are the products of the
/// 1-D weights and sum to one.
#[derive(Debug, Clone)]
pub struct TensorRule {
    /// Per-dimension 1-D rules.
    pub rules: Vec<QuadratureRule>,
    /// Quadrature points, one column per point.
    pub points: Matrix,
    /// Product weights.
    pub weights: Vec<f64>,
}

impl TensorRule {
    /// Number of tensor points.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    /// True when the rule has no points (never the case for valid input).
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Applies the rule to a vector-valued function of the standardized
    /// coordinates.
    pub fn integrate_vec(&self, mut f: impl FnMut(&Vector) -> f64) -> f64 {
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            let x = Vector::from_column_slice(self.points.column(i).as_slice());
            acc += w * f(&x);
        }
        acc
    }
}

/// Builds the full Cartesian tensor rule for the given families and orders.
pub fn tensor_rule(families: &[PolynomialFamily], orders: &[usize]) -> Result<TensorRule> {
    if families.is_empty() || families.len() != orders.len() {
        return Err(Error::ParameterDomain(
            "families and orders must be non-empty lists of equal length".into(),
        ));
    }
    let rules: Vec<QuadratureRule> = families
        .iter()
        .zip(orders)
        .map(|(&f, &d)| gauss_rule(f, d))
        .collect::<Result<_>>()?;
    let dim = rules.len();
    let np: usize = rules.iter().map(QuadratureRule::order).product();
    let mut points = Matrix::zeros(dim, np);
    let mut weights = vec![0.0; np];
    for i in 0..np {
        // Lexicographic decode, last dimension fastest.
        let mut rem = i;
        let mut w = 1.0;
        for k in (0..dim).rev() {
            let d = rules[k].order();
            let idx = rem % d;
            rem /= d;
            points[(k, i)] = rules[k].nodes[idx];
            w *= rules[k].weights[idx];
        }
        weights[i] = w;
    }
    Ok(TensorRule {
        rules,
        points,
        weights,
    })
}
