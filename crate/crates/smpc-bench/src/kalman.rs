//! Linear Kalman filter at a fixed linearization point.
//!
//! The prediction step mirrors the Taylor moment propagation: the mean moves
//! with the discretized linear model and the covariance as `F P F' + Q`.
//! Updates process the (diagonal-noise) measurement components sequentially,
//! which also gives a natural meaning to infinite measurement noise: the
//! component is skipped and the state stays untouched.

use smpc_core::{Error, Matrix, Result, Vector};

/// Kalman filter state and fixed linearized model.
#[derive(Debug, Clone)]
pub struct KalmanFilter {
    /// Discrete state transition `F`.
    pub f: Matrix,
    /// Discrete input matrix `G`.
    pub g: Matrix,
    /// Measurement matrix `H`.
    pub h: Matrix,
    /// Process noise covariance per step.
    pub q: Matrix,
    /// Diagonal measurement noise variances.
    pub r_diag: Vector,
    /// Current state mean estimate.
    pub mean: Vector,
    /// Current state covariance estimate.
    pub cov: Matrix,
}

impl KalmanFilter {
    /// Builds the filter from a continuous-time linearization `(A, B)` with
    /// Euler discretization at `dt`.
    pub fn from_continuous(
        a: &Matrix,
        b: &Matrix,
        h: Matrix,
        q: Matrix,
        r_diag: Vector,
        dt: f64,
        mean0: Vector,
        cov0: Matrix,
    ) -> Self {
        let n = a.nrows();
        let f = Matrix::identity(n, n) + a * dt;
        let g = b * dt;
        Self {
            f,
            g,
            h,
            q,
            r_diag,
            mean: mean0,
            cov: cov0,
        }
    }

    /// Prediction step with the applied control `u`.
    pub fn predict(&mut self, u: &Vector) {
        self.mean = &self.f * &self.mean + &self.g * u;
        self.cov = &self.f * &self.cov * self.f.transpose() + &self.q;
        symmetrize(&mut self.cov);
    }

    /// Measurement update; components with infinite noise are skipped.
    pub fn update(&mut self, y: &Vector) -> Result<()> {
        for j in 0..self.h.nrows() {
            let r = self.r_diag[j];
            if r.is_infinite() {
                continue;
            }
            let hj = self.h.row(j).transpose();
            let ph = &self.cov * &hj;
            let s = (hj.transpose() * &ph)[(0, 0)] + r;
            let tol = 1e-14 * (1.0 + r + self.cov.amax());
            if !s.is_finite() || s < -1e3 * tol {
                return Err(Error::Filter(format!(
                    "singular innovation covariance {s} in component {j}"
                )));
            }
            if s <= tol {
                // Numerically zero innovation variance: the component is
                // already exact and the measurement adds no information.
                continue;
            }
            let k = &ph / s;
            let innov = y[j] - (self.h.row(j) * &self.mean)[(0, 0)];
            self.mean += &k * innov;
            self.cov -= &k * ph.transpose();
            symmetrize(&mut self.cov);
        }
        Ok(())
    }
}

fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
