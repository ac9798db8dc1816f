//! Probability distributions of initial states and parameters.
//!
//! A [`JointDistribution`] carries the first two moments and, when known, the
//! per-dimension marginal families. Sampling is seeded and counter-based: the
//! i-th sample column always consumes the i-th RNG stream, so the output is
//! bitwise reproducible regardless of how the columns are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::cholesky_psd;
use crate::{Error, Matrix, Result, Vector};

/// Univariate marginal distribution family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginalDistribution {
    /// Gaussian with mean and variance.
    Gaussian {
        /// Mean.
        mean: f64,
        /// Variance (>= 0).
        variance: f64,
    },
    /// Uniform on `[lower, upper)`.
    Uniform {
        /// Lower bound.
        lower: f64,
        /// Upper bound (> lower).
        upper: f64,
    },
}

impl MarginalDistribution {
    /// Validates the family parameters.
    pub fn validate(&self) -> Result<()> {
        match *self {
            MarginalDistribution::Gaussian { variance, .. } => {
                if !(variance >= 0.0) || !variance.is_finite() {
                    return Err(Error::ParameterDomain(format!(
                        "Gaussian variance must be finite and >= 0, got {variance}"
                    )));
                }
            }
            MarginalDistribution::Uniform { lower, upper } => {
                if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
                    return Err(Error::ParameterDomain(format!(
                        "Uniform requires lower < upper, got [{lower}, {upper}]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Analytic mean of the marginal.
    pub fn mean(&self) -> f64 {
        match *self {
            MarginalDistribution::Gaussian { mean, .. } => mean,
            MarginalDistribution::Uniform { lower, upper } => 0.5 * (lower + upper),
        }
    }

    /// Analytic variance of the marginal.
    pub fn variance(&self) -> f64 {
        match *self {
            MarginalDistribution::Gaussian { variance, .. } => variance,
            MarginalDistribution::Uniform { lower, upper } => {
                let w = upper - lower;
                w * w / 12.0
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            MarginalDistribution::Gaussian { mean, variance } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + variance.sqrt() * z
            }
            MarginalDistribution::Uniform { lower, upper } => {
                lower + (upper - lower) * rng.random::<f64>()
            }
        }
    }
}

/// Joint distribution given by mean, covariance and optional marginals.
///
/// Immutable after construction and safe to share across threads. When the
/// marginal list is empty only the moments are known; sampling then assumes a
/// Gaussian density.
#[derive(Debug, Clone)]
pub struct JointDistribution {
    dim: usize,
    mean: Vector,
    cov: Matrix,
    marginals: Vec<MarginalDistribution>,
}

impl JointDistribution {
    /// Builds a joint distribution of independent marginals.
    ///
    /// The mean stacks the marginal means and the covariance is the diagonal
    /// of the marginal variances.
    pub fn from_marginals(marginals: Vec<MarginalDistribution>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::ParameterDomain(
                "at least one marginal is required".into(),
            ));
        }
        for m in &marginals {
            m.validate()?;
        }
        let mean = Vector::from_iterator(marginals.len(), marginals.iter().map(|m| m.mean()));
        let cov = Matrix::from_diagonal(&Vector::from_iterator(
            marginals.len(),
            marginals.iter().map(|m| m.variance()),
        ));
        Ok(Self {
            dim: marginals.len(),
            mean,
            cov,
            marginals,
        })
    }

    /// Builds a moment-only distribution (no marginal family information).
    pub fn from_moments(mean: Vector, cov: Matrix) -> Result<Self> {
        Self::validate_moments(&mean, &cov)?;
        Ok(Self {
            dim: mean.len(),
            mean,
            cov,
            marginals: Vec::new(),
        })
    }

    /// Builds a (possibly correlated) Gaussian distribution.
    ///
    /// Marginals are recorded per dimension; sampling uses the full
    /// covariance through its Cholesky factor.
    pub fn gaussian(mean: Vector, cov: Matrix) -> Result<Self> {
        Self::validate_moments(&mean, &cov)?;
        let marginals = (0..mean.len())
            .map(|i| MarginalDistribution::Gaussian {
                mean: mean[i],
                variance: cov[(i, i)],
            })
            .collect();
        Ok(Self {
            dim: mean.len(),
            mean,
            cov,
            marginals,
        })
    }

    fn validate_moments(mean: &Vector, cov: &Matrix) -> Result<()> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Dimension(format!(
                "covariance {}x{} does not match mean length {}",
                cov.nrows(),
                cov.ncols(),
                n
            )));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in (i + 1)..n {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::ParameterDomain(format!(
                        "covariance is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        if n > 0 {
            let eig = cov.clone().symmetric_eigenvalues();
            let floor = -1e-10 * cov.trace().abs().max(f64::MIN_POSITIVE);
            if eig.iter().any(|&l| l < floor) {
                return Err(Error::ParameterDomain(format!(
                    "covariance has eigenvalue {} below tolerance",
                    eig.min()
                )));
            }
        }
        Ok(())
    }

    /// Stacks two independent distributions into one block distribution.
    ///
    /// Marginal information is kept when both blocks provide it (moment-only
    /// Gaussian blocks with diagonal covariance are promoted to per-dimension
    /// Gaussian marginals); otherwise the result is moment-only.
    pub fn stack(a: &JointDistribution, b: &JointDistribution) -> Self {
        let dim = a.dim + b.dim;
        let mut mean = Vector::zeros(dim);
        mean.rows_mut(0, a.dim).copy_from(&a.mean);
        mean.rows_mut(a.dim, b.dim).copy_from(&b.mean);
        let mut cov = Matrix::zeros(dim, dim);
        cov.view_mut((0, 0), (a.dim, a.dim)).copy_from(&a.cov);
        cov.view_mut((a.dim, a.dim), (b.dim, b.dim))
            .copy_from(&b.cov);

        let ma = a.marginals_or_synthesized();
        let mb = b.marginals_or_synthesized();
        let marginals = match (ma, mb) {
            (Some(mut ma), Some(mb)) => {
                ma.extend(mb);
                ma
            }
            _ => Vec::new(),
        };
        Self {
            dim,
            mean,
            cov,
            marginals,
        }
    }

    /// Marginals, synthesizing Gaussian ones for a diagonal moment-only
    /// distribution. `None` when correlations prevent a marginal view.
    fn marginals_or_synthesized(&self) -> Option<Vec<MarginalDistribution>> {
        if !self.marginals.is_empty() {
            return Some(self.marginals.clone());
        }
        if self.is_diagonal() {
            Some(
                (0..self.dim)
                    .map(|i| MarginalDistribution::Gaussian {
                        mean: self.mean[i],
                        variance: self.cov[(i, i)],
                    })
                    .collect(),
            )
        } else {
            None
        }
    }

    fn is_diagonal(&self) -> bool {
        let scale = self.cov.amax().max(f64::MIN_POSITIVE);
        for i in 0..self.dim {
            for j in 0..self.dim {
                if i != j && self.cov[(i, j)].abs() > 1e-12 * scale {
                    return false;
                }
            }
        }
        true
    }

    /// Dimension of the random vector.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mean vector.
    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    /// Covariance matrix.
    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    /// Marginals, empty when only moments are known.
    pub fn marginals(&self) -> &[MarginalDistribution] {
        &self.marginals
    }

    /// Test-only constructor bypassing the marginal/covariance consistency
    /// checks, for exercising error paths.
    #[cfg(test)]
    pub(crate) fn forge(marginals: Vec<MarginalDistribution>, mean: Vector, cov: Matrix) -> Self {
        Self {
            dim: mean.len(),
            mean,
            cov,
            marginals,
        }
    }

    /// True when every marginal is Gaussian or the distribution is
    /// moment-only (Gaussian fallback).
    pub fn is_gaussian_like(&self) -> bool {
        self.marginals
            .iter()
            .all(|m| matches!(m, MarginalDistribution::Gaussian { .. }))
    }

    /// Draws `n` i.i.d. samples as columns of an `dim x n` matrix.
    ///
    /// Identical `(distribution, n, seed)` produce identical output. Sample
    /// `i` reads RNG stream `i` of the seed, so the result does not depend on
    /// evaluation order.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Matrix> {
        if n == 0 {
            return Err(Error::ParameterDomain("sample count must be >= 1".into()));
        }
        let mut out = Matrix::zeros(self.dim, n);
        if self.is_gaussian_like() {
            // Joint Gaussian draw through the Cholesky factor.
            let l = cholesky_psd(&self.cov)?;
            let mut z = Vector::zeros(self.dim);
            for i in 0..n {
                let mut rng = column_rng(seed, i);
                for k in 0..self.dim {
                    z[k] = rng.sample(StandardNormal);
                }
                let mut col = out.column_mut(i);
                col.copy_from(&self.mean);
                col.gemv(1.0, &l, &z, 1.0);
            }
            return Ok(out);
        }
        // Non-Gaussian marginals: independent per-dimension sampling.
        if !self.is_diagonal() {
            return Err(Error::UnsupportedDistribution(
                "correlated sampling is only supported for Gaussian distributions".into(),
            ));
        }
        for i in 0..n {
            let mut rng = column_rng(seed, i);
            for (k, m) in self.marginals.iter().enumerate() {
                out[(k, i)] = m.draw(&mut rng);
            }
        }
        Ok(out)
    }
}

/// RNG for sample column `i`: fixed seed, stream indexed by the column.
fn column_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}
