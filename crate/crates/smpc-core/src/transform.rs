//! Uncertainty propagation through nonlinear maps.
//!
//! Given a random vector `xi` with known moments (and possibly marginals),
//! the methods here estimate mean, covariance and input-output
//! cross-covariance of `y = psi(xi)`: first-order Taylor linearization,
//! Stirling's interpolation of first and second order, the unscented
//! transformation, tensor Gaussian quadrature, Monte-Carlo sampling and
//! polynomial chaos expansion.

use rayon::prelude::*;

use crate::distributions::{JointDistribution, MarginalDistribution};
use crate::linalg::{symmetrize, weighted_column_mean, weighted_cross_scatter};
use crate::polyquad::{self, norm_squared, poly_eval, PolynomialFamily, TensorRule};
use crate::{Error, Matrix, Result, Vector};

pub use crate::linalg::cholesky_psd;

/// Uncertainty propagation method with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PropagationMethod {
    /// First-order Taylor linearization at the mean (needs the Jacobian).
    Taylor1,
    /// First-order Stirling interpolation with step `h`.
    Stirling1 {
        /// Central-difference step size (> 0).
        h: f64,
    },
    /// Second-order Stirling interpolation with step `h`.
    Stirling2 {
        /// Central-difference step size (> 0).
        h: f64,
    },
    /// Unscented transformation.
    Unscented {
        /// Spread parameter (> 0).
        alpha: f64,
        /// Prior-knowledge parameter (2 is optimal for Gaussians).
        beta: f64,
        /// Secondary scaling; `None` resolves to `3 - n_xi`.
        kappa: Option<f64>,
    },
    /// Tensor Gaussian quadrature of the given 1-D order.
    GaussQuadrature {
        /// Quadrature order per dimension.
        order: usize,
    },
    /// Monte-Carlo sampling.
    MonteCarlo {
        /// Number of samples (>= 2).
        np: usize,
        /// Seed of the counter-based sample stream.
        seed: u64,
    },
    /// Polynomial chaos expansion projected by tensor quadrature.
    Pce {
        /// Number of 1-D basis functions (degrees `0..order`).
        order: usize,
        /// Quadrature order used for the projection (>= `order`).
        quad_order: usize,
    },
}

impl PropagationMethod {
    /// Unscented transformation with Gaussian-optimal defaults
    /// (`alpha = 1`, `beta = 2`, `kappa = 3 - n_xi`).
    pub fn unscented() -> Self {
        PropagationMethod::Unscented {
            alpha: 1.0,
            beta: 2.0,
            kappa: None,
        }
    }

    /// First-order Stirling interpolation with the optimal normal-input
    /// step `h = sqrt(3)`.
    pub fn stirling1() -> Self {
        PropagationMethod::Stirling1 { h: 3f64.sqrt() }
    }

    /// Second-order Stirling interpolation with `h = sqrt(3)`.
    pub fn stirling2() -> Self {
        PropagationMethod::Stirling2 { h: 3f64.sqrt() }
    }

    fn validate(&self, n_xi: usize) -> Result<()> {
        match *self {
            PropagationMethod::Taylor1 => Ok(()),
            PropagationMethod::Stirling1 { h } | PropagationMethod::Stirling2 { h } => {
                if h > 0.0 {
                    Ok(())
                } else {
                    Err(Error::ParameterDomain(format!(
                        "Stirling step must be > 0, got {h}"
                    )))
                }
            }
            PropagationMethod::Unscented { alpha, kappa, .. } => {
                if alpha <= 0.0 {
                    return Err(Error::ParameterDomain(format!(
                        "unscented alpha must be > 0, got {alpha}"
                    )));
                }
                let kappa = kappa.unwrap_or(3.0 - n_xi as f64);
                if alpha * alpha * (n_xi as f64 + kappa) <= 0.0 {
                    return Err(Error::ParameterDomain(format!(
                        "unscented scaling alpha^2 (n + kappa) must be > 0 \
                         (alpha={alpha}, kappa={kappa}, n={n_xi})"
                    )));
                }
                Ok(())
            }
            PropagationMethod::GaussQuadrature { order } => {
                if order >= 1 && order <= polyquad::MAX_ORDER {
                    Ok(())
                } else {
                    Err(Error::ParameterDomain(format!(
                        "quadrature order must lie in [1, {}], got {order}",
                        polyquad::MAX_ORDER
                    )))
                }
            }
            PropagationMethod::MonteCarlo { np, .. } => {
                if np >= 2 {
                    Ok(())
                } else {
                    Err(Error::ParameterDomain(format!(
                        "Monte-Carlo needs at least 2 samples, got {np}"
                    )))
                }
            }
            PropagationMethod::Pce { order, quad_order } => {
                if order < 1 {
                    return Err(Error::ParameterDomain(format!(
                        "PCE order must be >= 1, got {order}"
                    )));
                }
                if quad_order < order || quad_order > polyquad::MAX_ORDER {
                    return Err(Error::ParameterDomain(format!(
                        "PCE quadrature order must lie in [{order}, {}], got {quad_order}",
                        polyquad::MAX_ORDER
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Structure of a generated point set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointLayout {
    /// Center point followed by `n_dirs` plus-points and `n_dirs`
    /// minus-points in matching order (unscented/Stirling geometry).
    CenterSymmetric {
        /// Number of perturbation directions.
        n_dirs: usize,
    },
    /// No special structure (quadrature, Monte-Carlo).
    Free,
}

/// Propagation points with mean and covariance weights.
#[derive(Debug, Clone)]
pub struct PointSet {
    /// Points, one column each.
    pub points: Matrix,
    /// Weights for mean estimation; sums to one.
    pub w_mean: Vec<f64>,
    /// Weights for covariance estimation.
    pub w_cov: Vec<f64>,
    /// Geometric structure of the set.
    pub layout: PointLayout,
}

impl PointSet {
    /// Number of points.
    pub fn len(&self) -> usize {
        self.w_mean.len()
    }

    /// True when the set is empty (never for valid construction).
    pub fn is_empty(&self) -> bool {
        self.w_mean.is_empty()
    }

    /// Weighted mean of the points themselves.
    pub fn mean(&self) -> Vector {
        weighted_column_mean(&self.points, &self.w_mean)
    }

    /// Weighted scatter of the points around a given center.
    pub fn scatter(&self, center: &Vector) -> Matrix {
        let mut s = weighted_cross_scatter(&self.points, center, &self.points, center, &self.w_cov);
        symmetrize(&mut s);
        s
    }
}

/// Generates the propagation point set of `method` for `dist`.
///
/// Taylor linearization uses no points and is rejected here.
pub fn generate_points(method: &PropagationMethod, dist: &JointDistribution) -> Result<PointSet> {
    let n = dist.dim();
    method.validate(n)?;
    match *method {
        PropagationMethod::Taylor1 => Err(Error::ParameterDomain(
            "Taylor linearization does not use propagation points".into(),
        )),
        PropagationMethod::Unscented { .. }
        | PropagationMethod::Stirling1 { .. }
        | PropagationMethod::Stirling2 { .. } => {
            generate_points_from_moments(method, dist.mean(), dist.cov())
        }
        PropagationMethod::GaussQuadrature { order } => {
            let emb = QuadratureEmbedding::build(dist, order)?;
            Ok(PointSet {
                points: emb.physical_points,
                w_mean: emb.tensor.weights.clone(),
                w_cov: emb.tensor.weights,
                layout: PointLayout::Free,
            })
        }
        PropagationMethod::Pce { quad_order, .. } => {
            // The sampling-based pipeline treats PCE through its quadrature
            // grid; the expansion itself is built by `pce_coefficients`.
            let emb = QuadratureEmbedding::build(dist, quad_order)?;
            Ok(PointSet {
                points: emb.physical_points,
                w_mean: emb.tensor.weights.clone(),
                w_cov: emb.tensor.weights,
                layout: PointLayout::Free,
            })
        }
        PropagationMethod::MonteCarlo { np, seed } => {
            let points = dist.sample(np, seed)?;
            let w = 1.0 / np as f64;
            Ok(PointSet {
                points,
                w_mean: vec![w; np],
                w_cov: vec![w; np],
                layout: PointLayout::Free,
            })
        }
    }
}

/// Point set of a moment-based method directly from `(mean, cov)`.
///
/// Unlike [`generate_points`] this skips distribution validation: the
/// covariance is consumed as stored (its lower triangle drives the Cholesky
/// factor), which keeps the map smooth under finite-difference probing.
/// Only the unscented and Stirling methods are supported.
pub fn generate_points_from_moments(
    method: &PropagationMethod,
    mean: &Vector,
    cov: &Matrix,
) -> Result<PointSet> {
    let n = mean.len();
    method.validate(n)?;
    match *method {
        PropagationMethod::Unscented { alpha, beta, kappa } => {
            let kappa = kappa.unwrap_or(3.0 - n as f64);
            let c = alpha * alpha * (n as f64 + kappa);
            let s = cholesky_psd(cov)?;
            let points = symmetric_points(mean, &s, c.sqrt());
            let w0 = 1.0 - n as f64 / c;
            let wi = 1.0 / (2.0 * c);
            let mut w_mean = vec![wi; 2 * n + 1];
            let mut w_cov = vec![wi; 2 * n + 1];
            w_mean[0] = w0;
            w_cov[0] = w0 + 1.0 - alpha * alpha + beta;
            Ok(PointSet {
                points,
                w_mean,
                w_cov,
                layout: PointLayout::CenterSymmetric { n_dirs: n },
            })
        }
        PropagationMethod::Stirling1 { h } | PropagationMethod::Stirling2 { h } => {
            let s = cholesky_psd(cov)?;
            let points = symmetric_points(mean, &s, h);
            let h2 = h * h;
            let w0 = (h2 - n as f64) / h2;
            let wi = 1.0 / (2.0 * h2);
            let mut w_mean = vec![wi; 2 * n + 1];
            let mut w_cov = vec![wi; 2 * n + 1];
            if matches!(method, PropagationMethod::Stirling1 { .. }) {
                w_mean = vec![0.0; 2 * n + 1];
                w_mean[0] = 1.0;
            } else {
                w_mean[0] = w0;
            }
            w_cov[0] = w0;
            Ok(PointSet {
                points,
                w_mean,
                w_cov,
                layout: PointLayout::CenterSymmetric { n_dirs: n },
            })
        }
        _ => Err(Error::ParameterDomain(
            "moment-based point generation supports unscented and Stirling methods".into(),
        )),
    }
}

/// `[mu, mu + c s_1, ..., mu + c s_n, mu - c s_1, ..., mu - c s_n]`.
fn symmetric_points(mean: &Vector, s: &Matrix, c: f64) -> Matrix {
    let n = mean.len();
    let mut points = Matrix::zeros(n, 2 * n + 1);
    points.column_mut(0).copy_from(mean);
    for i in 0..n {
        let dir = s.column(i) * c;
        points.column_mut(1 + i).copy_from(&(mean + &dir));
        points.column_mut(1 + n + i).copy_from(&(mean - &dir));
    }
    points
}

/// Map `psi` to be propagated; the Jacobian is only needed for Taylor
/// linearization.
pub trait PropagationMap: Sync {
    /// Output dimension of the map.
    fn output_dim(&self) -> usize;
    /// Evaluates `psi(xi)`.
    fn eval(&self, xi: &Vector) -> Vector;
    /// Jacobian of `psi` at `xi`, when available.
    fn jacobian(&self, _xi: &Vector) -> Option<Matrix> {
        None
    }
}

/// Closure-backed [`PropagationMap`] without a Jacobian.
pub struct FnMap<F: Fn(&Vector) -> Vector + Sync> {
    ny: usize,
    f: F,
}

impl<F: Fn(&Vector) -> Vector + Sync> FnMap<F> {
    /// Wraps `f` with output dimension `ny`.
    pub fn new(ny: usize, f: F) -> Self {
        Self { ny, f }
    }
}

impl<F: Fn(&Vector) -> Vector + Sync> PropagationMap for FnMap<F> {
    fn output_dim(&self) -> usize {
        self.ny
    }
    fn eval(&self, xi: &Vector) -> Vector {
        (self.f)(xi)
    }
}

/// Closure-backed [`PropagationMap`] with an analytic Jacobian.
pub struct FnMapJac<F, G>
where
    F: Fn(&Vector) -> Vector + Sync,
    G: Fn(&Vector) -> Matrix + Sync,
{
    ny: usize,
    f: F,
    jac: G,
}

impl<F, G> FnMapJac<F, G>
where
    F: Fn(&Vector) -> Vector + Sync,
    G: Fn(&Vector) -> Matrix + Sync,
{
    /// Wraps `f` and its Jacobian `jac` with output dimension `ny`.
    pub fn new(ny: usize, f: F, jac: G) -> Self {
        Self { ny, f, jac }
    }
}

impl<F, G> PropagationMap for FnMapJac<F, G>
where
    F: Fn(&Vector) -> Vector + Sync,
    G: Fn(&Vector) -> Matrix + Sync,
{
    fn output_dim(&self) -> usize {
        self.ny
    }
    fn eval(&self, xi: &Vector) -> Vector {
        (self.f)(xi)
    }
    fn jacobian(&self, xi: &Vector) -> Option<Matrix> {
        Some((self.jac)(xi))
    }
}

/// Estimated output moments of a propagated map.
#[derive(Debug, Clone)]
pub struct Propagated {
    /// Estimated mean of `y`.
    pub mean: Vector,
    /// Estimated covariance of `y` (symmetrized).
    pub cov: Matrix,
    /// Estimated cross-covariance `Cov[y, xi]`.
    pub cross_cov: Matrix,
}

/// Propagates `psi` through `dist` with the chosen method.
pub fn propagate(
    method: &PropagationMethod,
    psi: &dyn PropagationMap,
    dist: &JointDistribution,
) -> Result<Propagated> {
    let n = dist.dim();
    method.validate(n)?;
    match *method {
        PropagationMethod::Taylor1 => {
            let mu = dist.mean();
            let jac = psi.jacobian(mu).ok_or_else(|| {
                Error::MissingDerivative(
                    "Taylor linearization requires the Jacobian of the map".into(),
                )
            })?;
            let mean = checked_eval(psi, mu)?;
            let cross = &jac * dist.cov();
            let mut cov = &cross * jac.transpose();
            symmetrize(&mut cov);
            Ok(Propagated {
                mean,
                cov,
                cross_cov: cross,
            })
        }
        PropagationMethod::Pce { order, quad_order } => {
            let pce = pce_coefficients(psi, dist, order, quad_order)?;
            Ok(pce.moments())
        }
        PropagationMethod::Stirling1 { h } | PropagationMethod::Stirling2 { h } => {
            let set = generate_points(method, dist)?;
            let values = eval_points(psi, &set.points)?;
            let second_order = matches!(method, PropagationMethod::Stirling2 { .. });
            stirling_moments(&set, &values, dist, h, second_order)
        }
        _ => {
            let set = generate_points(method, dist)?;
            let values = eval_points(psi, &set.points)?;
            Ok(weighted_moments(&set, &values, dist.mean()))
        }
    }
}

/// Evaluates `psi` at every column, failing on non-finite output.
fn eval_points(psi: &dyn PropagationMap, points: &Matrix) -> Result<Matrix> {
    let np = points.ncols();
    let ny = psi.output_dim();
    let cols: Vec<Result<Vector>> = if np >= 256 {
        (0..np)
            .into_par_iter()
            .map(|i| checked_eval(psi, &Vector::from(points.column(i))))
            .collect()
    } else {
        (0..np)
            .map(|i| checked_eval(psi, &Vector::from(points.column(i))))
            .collect()
    };
    let mut out = Matrix::zeros(ny, np);
    for (i, col) in cols.into_iter().enumerate() {
        out.column_mut(i).copy_from(&col?);
    }
    Ok(out)
}

fn checked_eval(psi: &dyn PropagationMap, xi: &Vector) -> Result<Vector> {
    let y = psi.eval(xi);
    if y.iter().all(|v| v.is_finite()) {
        Ok(y)
    } else {
        Err(Error::Propagation {
            point: xi.iter().copied().collect(),
        })
    }
}

/// Generic weighted mean/covariance/cross-covariance reconstruction.
fn weighted_moments(set: &PointSet, values: &Matrix, input_mean: &Vector) -> Propagated {
    let mean = weighted_column_mean(values, &set.w_mean);
    let mut cov = weighted_cross_scatter(values, &mean, values, &mean, &set.w_cov);
    symmetrize(&mut cov);
    let cross_cov = weighted_cross_scatter(values, &mean, &set.points, input_mean, &set.w_cov);
    Propagated {
        mean,
        cov,
        cross_cov,
    }
}

/// Stirling interpolation moments from the symmetric point layout.
fn stirling_moments(
    set: &PointSet,
    values: &Matrix,
    dist: &JointDistribution,
    h: f64,
    second_order: bool,
) -> Result<Propagated> {
    let PointLayout::CenterSymmetric { n_dirs } = set.layout else {
        return Err(Error::ParameterDomain(
            "Stirling moments need the symmetric point layout".into(),
        ));
    };
    let ny = values.nrows();
    let h2 = h * h;

    let mean = weighted_column_mean(values, &set.w_mean);
    // First-order covariance from pairwise central differences.
    let mut cov = Matrix::zeros(ny, ny);
    for i in 0..n_dirs {
        let diff = values.column(1 + i) - values.column(1 + n_dirs + i);
        cov.ger(1.0 / (4.0 * h2), &diff, &diff, 1.0);
    }
    if second_order {
        // Adds the second central difference term.
        let center = values.column(0);
        let factor = (h2 - 1.0) / (4.0 * h2 * h2);
        for i in 0..n_dirs {
            let dd = values.column(1 + i) + values.column(1 + n_dirs + i) - 2.0 * center;
            cov.ger(factor, &dd, &dd, 1.0);
        }
    }
    symmetrize(&mut cov);
    let cross_cov = weighted_cross_scatter(values, &mean, &set.points, dist.mean(), &set.w_cov);
    Ok(Propagated {
        mean,
        cov,
        cross_cov,
    })
}

/// Standardized quadrature grid with its affine map to physical space.
struct QuadratureEmbedding {
    tensor: TensorRule,
    /// Physical points `xi = offset + map * zeta` per column.
    physical_points: Matrix,
    /// Linear part of the standardization map.
    map: Matrix,
    families: Vec<PolynomialFamily>,
}

impl QuadratureEmbedding {
    fn build(dist: &JointDistribution, order: usize) -> Result<Self> {
        let n = dist.dim();
        let marginals = dist.marginals();
        let has_uniform = marginals
            .iter()
            .any(|m| matches!(m, MarginalDistribution::Uniform { .. }));

        let (families, map, offset): (Vec<PolynomialFamily>, Matrix, Vector) = if !has_uniform {
            // Gaussian (possibly correlated) or moment-only fallback:
            // Hermite grid mapped through the Cholesky factor.
            let s = cholesky_psd(dist.cov())?;
            (
                vec![PolynomialFamily::HermiteProbabilists; n],
                s,
                dist.mean().clone(),
            )
        } else {
            // Mixed Gaussian/uniform marginals must be independent.
            if !is_diag(dist.cov()) {
                return Err(Error::FamilyMismatch(
                    "quadrature with uniform marginals requires independent dimensions".into(),
                ));
            }
            let mut fams = Vec::with_capacity(n);
            let mut scale = Matrix::zeros(n, n);
            let mut offset = Vector::zeros(n);
            for (i, m) in marginals.iter().enumerate() {
                match *m {
                    MarginalDistribution::Gaussian { mean, variance } => {
                        fams.push(PolynomialFamily::HermiteProbabilists);
                        scale[(i, i)] = variance.sqrt();
                        offset[i] = mean;
                    }
                    MarginalDistribution::Uniform { lower, upper } => {
                        fams.push(PolynomialFamily::Legendre);
                        scale[(i, i)] = 0.5 * (upper - lower);
                        offset[i] = 0.5 * (lower + upper);
                    }
                }
            }
            (fams, scale, offset)
        };

        let tensor = polyquad::tensor_rule(&families, &vec![order; n])?;
        let np = tensor.len();
        let mut physical = Matrix::zeros(n, np);
        for i in 0..np {
            let zeta = tensor.points.column(i);
            let mut col = physical.column_mut(i);
            col.copy_from(&offset);
            col.gemv(1.0, &map, &zeta, 1.0);
        }
        Ok(Self {
            tensor,
            physical_points: physical,
            map,
            families,
        })
    }
}

fn is_diag(m: &Matrix) -> bool {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j && m[(i, j)].abs() > 1e-12 * scale {
                return false;
            }
        }
    }
    true
}

/// Multivariate polynomial chaos expansion of a map.
#[derive(Debug, Clone)]
pub struct PceExpansion {
    /// Coefficient matrix, one column per basis function (`Ny x Nbasis`).
    pub coefficients: Matrix,
    /// Multi-indices of the basis, graded order, all-zeros first.
    pub indices: Vec<Vec<usize>>,
    /// Squared norms of the basis functions.
    pub norms: Vec<f64>,
    /// Linear part of the standardization map `xi = offset + map * zeta`.
    map: Matrix,
    /// Per-dimension polynomial family.
    families: Vec<PolynomialFamily>,
}

impl PceExpansion {
    /// Output moments implied by the expansion: mean is the constant
    /// coefficient, covariance sums coefficient outer products over the
    /// non-constant basis, and the cross-covariance comes from the
    /// degree-one coefficients.
    pub fn moments(&self) -> Propagated {
        let ny = self.coefficients.nrows();
        let n = self.families.len();
        let mean = Vector::from(self.coefficients.column(0));
        let mut cov = Matrix::zeros(ny, ny);
        for (k, idx) in self.indices.iter().enumerate().skip(1) {
            let a = self.coefficients.column(k);
            cov.ger(self.norms[k], &a, &a, 1.0);
            debug_assert!(idx.iter().sum::<usize>() > 0);
        }
        symmetrize(&mut cov);
        // Cov[y, zeta_j] = a_{e_j} * E[zeta_j^2]; then Cov[y, xi] through the
        // linear standardization map.
        let mut cov_y_zeta = Matrix::zeros(ny, n);
        for (k, idx) in self.indices.iter().enumerate() {
            if idx.iter().sum::<usize>() == 1 {
                let j = idx.iter().position(|&d| d == 1).unwrap();
                let e_zeta2 = norm_squared(self.families[j], 1);
                let a = self.coefficients.column(k);
                cov_y_zeta.column_mut(j).axpy(e_zeta2, &a, 1.0);
            }
        }
        let cross_cov = cov_y_zeta * self.map.transpose();
        Propagated {
            mean,
            cov,
            cross_cov,
        }
    }
}

/// Enumerates multi-indices of total degree `<= max_deg`, graded order.
fn total_degree_indices(dim: usize, max_deg: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; dim];
    for deg in 0..=max_deg {
        fill_degree(dim, deg, 0, &mut idx, &mut out);
    }
    out
}

fn fill_degree(
    dim: usize,
    remaining: usize,
    pos: usize,
    idx: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if pos + 1 == dim {
        idx[pos] = remaining;
        out.push(idx.clone());
        return;
    }
    for d in (0..=remaining).rev() {
        idx[pos] = d;
        fill_degree(dim, remaining - d, pos + 1, idx, out);
    }
}

/// Projects `psi` on the orthogonal basis matched to the marginals of
/// `dist`: coefficients `a_i = <psi, phi_i> / <phi_i, phi_i>` with the inner
/// product evaluated by tensor quadrature in standardized coordinates.
///
/// The basis spans all products of 1-D polynomials with total degree
/// `< order`. Marginals must be all Gaussian (Hermite basis) or all uniform
/// (Legendre basis); mixed families have no common basis.
pub fn pce_coefficients(
    psi: &dyn PropagationMap,
    dist: &JointDistribution,
    order: usize,
    quad_order: usize,
) -> Result<PceExpansion> {
    PropagationMethod::Pce { order, quad_order }.validate(dist.dim())?;
    let marginals = dist.marginals();
    let n_uniform = marginals
        .iter()
        .filter(|m| matches!(m, MarginalDistribution::Uniform { .. }))
        .count();
    if n_uniform > 0 && n_uniform < dist.dim() {
        return Err(Error::UnsupportedBasis(
            "polynomial chaos basis is undefined for mixed marginal families".into(),
        ));
    }
    let emb = QuadratureEmbedding::build(dist, quad_order)?;
    let values = eval_points(psi, &emb.physical_points)?;
    let ny = psi.output_dim();

    let indices = total_degree_indices(dist.dim(), order - 1);
    let norms: Vec<f64> = indices
        .iter()
        .map(|idx| {
            idx.iter()
                .enumerate()
                .map(|(j, &d)| norm_squared(emb.families[j], d))
                .product()
        })
        .collect();

    let np = emb.tensor.len();
    let mut coefficients = Matrix::zeros(ny, indices.len());
    for (k, idx) in indices.iter().enumerate() {
        let mut acc = Vector::zeros(ny);
        for q in 0..np {
            let zeta = emb.tensor.points.column(q);
            let mut phi = 1.0;
            for (j, &d) in idx.iter().enumerate() {
                if d > 0 {
                    phi *= poly_eval(emb.families[j], d, zeta[j]);
                }
            }
            acc.axpy(emb.tensor.weights[q] * phi, &values.column(q), 1.0);
        }
        coefficients.column_mut(k).copy_from(&(acc / norms[k]));
    }
    Ok(PceExpansion {
        coefficients,
        indices,
        norms,
        map: emb.map,
        families: emb.families,
    })
}
