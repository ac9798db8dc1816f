//! Benchmark problems and closed-loop evaluation for the stochastic MPC
//! framework: a continuous stirred tank reactor with uncertain parameters, a
//! scalable nonlinear chain, a water tank with learned outflow dynamics and
//! an inverted pendulum on a cart, together with a noisy truth-plant
//! simulator, a linearized Kalman filter and the `smpc` command line.

pub mod chain;
pub mod cstr;
mod error;
pub mod kalman;
pub mod pendulum;
pub mod plant;
pub mod scenario;
pub mod watertank;

pub use error::BenchError;

/// Result alias for the benchmark harness.
pub type Result<T> = std::result::Result<T, BenchError>;
