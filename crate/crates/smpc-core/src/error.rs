use thiserror::Error;

/// Errors produced by the reformulation and solver pipeline.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A parameter is outside its admissible domain.
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    /// Dimensions of inputs are inconsistent.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Sampling requested from a distribution without a usable density.
    #[error("unsupported distribution: {0}")]
    UnsupportedDistribution(String),

    /// Covariance matrix stayed indefinite after the maximum jitter.
    #[error("indefinite covariance: most negative pivot {min_pivot:.3e}")]
    IndefiniteCovariance {
        /// Most negative diagonal pivot encountered during factorization.
        min_pivot: f64,
    },

    /// Quadrature/PCE family does not match the marginal distributions.
    #[error("distribution family mismatch: {0}")]
    FamilyMismatch(String),

    /// Polynomial chaos basis undefined for mixed marginal families.
    #[error("unsupported polynomial basis: {0}")]
    UnsupportedBasis(String),

    /// A required analytic derivative was not supplied.
    #[error("missing derivative: {0}")]
    MissingDerivative(String),

    /// The propagated map returned a non-finite value.
    #[error("propagation failed: non-finite output at point {point:?}")]
    Propagation {
        /// Input point at which the map produced NaN/Inf.
        point: Vec<f64>,
    },

    /// Gram matrix of a Gaussian process could not be factorized.
    #[error(
        "indefinite Gram matrix (most negative pivot {min_pivot:.3e}); \
         add jitter or a positive noise variance"
    )]
    IndefiniteGram {
        /// Most negative diagonal pivot encountered during factorization.
        min_pivot: f64,
    },

    /// Wiener diffusion is only supported in the moment-based representation.
    #[error("Wiener process is not supported in the sampling-based representation")]
    UnsupportedWiener,

    /// Gaussian processes are only supported in the moment-based representation.
    #[error("Gaussian processes are not supported in the sampling-based representation")]
    UnsupportedGp,

    /// Normal approximation of the sample proportion is invalid.
    #[error("normal approximation invalid: requires Ns*alpha >= 10 and Ns*(1-alpha) >= 5, got Ns={ns}, alpha={alpha}")]
    ApproximationInvalid {
        /// Number of samples.
        ns: usize,
        /// Probability level.
        alpha: f64,
    },

    /// Forward integration produced a non-finite state.
    #[error("integration failed at t={t}: non-finite state derivative")]
    Integration {
        /// Time at which the failure occurred.
        t: f64,
    },

    /// Kalman filter innovation covariance is singular.
    #[error("filter error: {0}")]
    Filter(String),
}
