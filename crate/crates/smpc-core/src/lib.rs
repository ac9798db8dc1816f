//! Stochastic nonlinear model predictive control building blocks.
//!
//! The crate turns a chance-constrained stochastic optimal control problem
//! into a deterministic one and solves it with an embedded augmented-Lagrangian
//! projected-gradient method. The pieces are usable on their own:
//!
//! * [`distributions`] — joint distributions of initial states and parameters,
//!   moments and seeded sampling.
//! * [`polyquad`] — orthogonal polynomial families (probabilists' Hermite,
//!   Legendre) and Gaussian quadrature rules, including tensor grids.
//! * [`transform`] — uncertainty propagation of a nonlinear map: Taylor
//!   linearization, Stirling interpolation (1st/2nd order), unscented
//!   transformation, Gaussian quadrature, Monte-Carlo and polynomial chaos.
//! * [`chance`] — deterministic tightening of chance constraints under three
//!   distributional assumptions, plus the sample-count confidence relation.
//! * [`gp`] — Gaussian-process regression of unknown residual dynamics.
//! * [`reformulate`] — sampling-based (SR) and moment-based (MR)
//!   reformulations of the stochastic OCP, optionally with a GP residual.
//! * [`solver`] — fixed-grid Heun integration, augmented-Lagrangian
//!   projected-gradient OCP solver and the warm-started MPC stepping loop.

pub mod chance;
pub mod distributions;
mod error;
pub mod gp;
pub(crate) mod linalg;
pub mod polyquad;
pub mod reformulate;
pub mod solver;
pub mod transform;

pub use error::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Dynamically sized column vector of `f64`.
pub type Vector = nalgebra::DVector<f64>;
/// Dynamically sized matrix of `f64`.
pub type Matrix = nalgebra::DMatrix<f64>;
