//! Moment-based representation with Taylor linearization.
//!
//! The deterministic state flattens `(mu_x, Sigma_x, Sigma_xp)`. Mean
//! channels use the system functions at the mean; covariance channels use
//! the Jacobians there. Sensitivities that would need second derivatives of
//! the system (covariance channels with respect to the mean and the control)
//! are taken by central finite differences on the covariance channels alone.

use std::sync::Arc;

use crate::chance::{tighten, ConstraintApprox};
use crate::gp::GpModel;
use crate::linalg::fd_step;
use crate::reformulate::{
    path_z_coeffs, terminal_z_coeffs, CostModel, DetOcp, DeterministicState, NodeJacobian,
    PathConstraint, StochasticProblem, SystemModel, TerminalConstraint,
};
use crate::{Matrix, Result, Vector};

/// Deterministic OCP in the moment-based representation with linearization.
pub struct MrTaylorOcp {
    sys: Arc<dyn SystemModel>,
    cost: Arc<dyn CostModel>,
    constraints: Vec<Arc<PathConstraint>>,
    terminal: Vec<Arc<TerminalConstraint>>,
    gp: Option<Arc<GpModel>>,
    nx: usize,
    nu: usize,
    np: usize,
    mu_p: Vector,
    sigma_p: Matrix,
    sigma_w2: Matrix,
    x0_flat: Vector,
    z_path: Vec<f64>,
    z_term: Vec<f64>,
    u_min: Vector,
    u_max: Vector,
    horizon: f64,
}

/// Splits the flattened state into `(mu, Sigma_x, Sigma_xp)`.
pub(crate) fn unflatten(xt: &Vector, nx: usize, np: usize) -> (Vector, Matrix, Matrix) {
    let mu = Vector::from(xt.rows(0, nx));
    let sx = Matrix::from_column_slice(nx, nx, xt.rows(nx, nx * nx).as_slice());
    let sxp = Matrix::from_column_slice(nx, np, xt.rows(nx + nx * nx, nx * np).as_slice());
    (mu, sx, sxp)
}

/// Packs `(mu, Sigma_x, Sigma_xp)` into the flattened state.
pub(crate) fn flatten(mu: &Vector, sx: &Matrix, sxp: &Matrix) -> Vector {
    let nx = mu.len();
    let np = sxp.ncols();
    let mut out = Vector::zeros(nx + nx * nx + nx * np);
    out.rows_mut(0, nx).copy_from(mu);
    out.rows_mut(nx, nx * nx)
        .copy_from(&Vector::from_column_slice(sx.as_slice()));
    if np > 0 {
        out.rows_mut(nx + nx * nx, nx * np)
            .copy_from(&Vector::from_column_slice(sxp.as_slice()));
    }
    out
}

impl MrTaylorOcp {
    pub(crate) fn build(problem: &StochasticProblem, approx: ConstraintApprox) -> Result<Self> {
        let nx = problem.system.nx();
        let np = problem.system.np();
        let x0_flat = flatten(
            problem.x0.mean(),
            problem.x0.cov(),
            &problem.x0_cross_or_zero(),
        );
        Ok(Self {
            sys: Arc::clone(&problem.system),
            cost: Arc::clone(&problem.cost),
            constraints: problem.constraints.iter().map(Arc::clone).collect(),
            terminal: problem
                .terminal_constraints
                .iter()
                .map(Arc::clone)
                .collect(),
            gp: problem.gp.clone(),
            nx,
            nu: problem.system.nu(),
            np,
            mu_p: problem.params.mean().clone(),
            sigma_p: problem.params.cov().clone(),
            sigma_w2: problem.diffusion_cov(),
            x0_flat,
            z_path: path_z_coeffs(&problem.constraints, approx)?,
            z_term: terminal_z_coeffs(&problem.terminal_constraints, approx)?,
            u_min: problem.u_min.clone(),
            u_max: problem.u_max.clone(),
            horizon: problem.horizon,
        })
    }

    /// Drift of the mean channel, including the GP residual mean.
    fn drift(&self, mu: &Vector, u: &Vector, t: f64) -> Vector {
        let mut f = self.sys.f(mu, u, &self.mu_p, t);
        if let Some(gp) = &self.gp {
            f += gp.predict_mean(&stack_z(mu, u));
        }
        f
    }

    /// `df/dx` at the mean, including the GP mean Jacobian.
    fn a_matrix(&self, mu: &Vector, u: &Vector, t: f64) -> Matrix {
        let mut a = self.sys.jac_x(mu, u, &self.mu_p, t);
        if let Some(gp) = &self.gp {
            let z = stack_z(mu, u);
            let jz = gp.mean_jacobian(&z);
            a += jz.columns(0, self.nx);
        }
        a
    }

    fn b_matrix(&self, mu: &Vector, u: &Vector, t: f64) -> Matrix {
        let mut b = self.sys.jac_u(mu, u, &self.mu_p, t);
        if let Some(gp) = &self.gp {
            let z = stack_z(mu, u);
            let jz = gp.mean_jacobian(&z);
            b += jz.columns(self.nx, self.nu);
        }
        b
    }

    /// Covariance channels `(dSigma_x, dSigma_xp)` for frozen `(Sigma_x,
    /// Sigma_xp)` as a function of `(mu, u)`.
    fn cov_channels(
        &self,
        mu: &Vector,
        u: &Vector,
        t: f64,
        sx: &Matrix,
        sxp: &Matrix,
    ) -> (Matrix, Matrix) {
        let a = self.a_matrix(mu, u, t);
        let p = self.sys.jac_p(mu, u, &self.mu_p, t);
        // Cov[f,x] + Cov[f,x]' expanded so each covariance entry is read
        // exactly where the adjoint formulas differentiate it.
        let axs = &a * sx;
        let psxp = &p * sxp.transpose();
        let mut dsx = &axs + sx * a.transpose() + &psxp + sxp * p.transpose() + &self.sigma_w2;
        if let Some(gp) = &self.gp {
            let z = stack_z(mu, u);
            let (_, var) = gp.predict(&z);
            for k in 0..self.nx {
                dsx[(k, k)] += var[k];
            }
        }
        let dsxp = &a * sxp + &p * &self.sigma_p;
        (dsx, dsxp)
    }
}

pub(crate) fn stack_z(x: &Vector, u: &Vector) -> Vector {
    let mut z = Vector::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    z
}

impl DetOcp for MrTaylorOcp {
    fn state_dim(&self) -> usize {
        self.nx + self.nx * self.nx + self.nx * self.np
    }
    fn control_dim(&self) -> usize {
        self.nu
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn initial_state(&self) -> Vector {
        self.x0_flat.clone()
    }
    fn u_min(&self) -> &Vector {
        &self.u_min
    }
    fn u_max(&self) -> &Vector {
        &self.u_max
    }
    fn n_path_constraints(&self) -> usize {
        self.constraints.len()
    }
    fn n_terminal_constraints(&self) -> usize {
        self.terminal.len()
    }

    fn dynamics(&self, xt: &Vector, u: &Vector, t: f64) -> Result<Vector> {
        let (mu, sx, sxp) = unflatten(xt, self.nx, self.np);
        let f = self.drift(&mu, u, t);
        let (dsx, dsxp) = self.cov_channels(&mu, u, t, &sx, &sxp);
        Ok(flatten(&f, &dsx, &dsxp))
    }

    fn dynamics_jacobian<'a>(
        &'a self,
        xt: &Vector,
        u: &Vector,
        t: f64,
    ) -> Result<Box<dyn NodeJacobian + 'a>> {
        let (mu, sx, sxp) = unflatten(xt, self.nx, self.np);
        let a = self.a_matrix(&mu, u, t);
        let b = self.b_matrix(&mu, u, t);
        let p = self.sys.jac_p(&mu, u, &self.mu_p, t);

        // Covariance-channel sensitivities with respect to mu and u by
        // central differences (they would need second derivatives of f).
        let nx = self.nx;
        let nu = self.nu;
        let mut d_mu = Vec::with_capacity(nx);
        let mut mu_p = mu.clone();
        for k in 0..nx {
            let h = fd_step(mu[k]);
            mu_p[k] = mu[k] + h;
            let (sxp1, sxpp1) = self.cov_channels(&mu_p, u, t, &sx, &sxp);
            mu_p[k] = mu[k] - h;
            let (sxm1, sxpm1) = self.cov_channels(&mu_p, u, t, &sx, &sxp);
            mu_p[k] = mu[k];
            d_mu.push(((sxp1 - sxm1) / (2.0 * h), (sxpp1 - sxpm1) / (2.0 * h)));
        }
        let mut d_u = Vec::with_capacity(nu);
        let mut u_p = u.clone();
        for k in 0..nu {
            let h = fd_step(u[k]);
            u_p[k] = u[k] + h;
            let (sxp1, sxpp1) = self.cov_channels(&mu, &u_p, t, &sx, &sxp);
            u_p[k] = u[k] - h;
            let (sxm1, sxpm1) = self.cov_channels(&mu, &u_p, t, &sx, &sxp);
            u_p[k] = u[k];
            d_u.push(((sxp1 - sxm1) / (2.0 * h), (sxpp1 - sxpm1) / (2.0 * h)));
        }
        Ok(Box::new(MrTaylorNodeJac {
            a,
            b,
            p,
            d_mu,
            d_u,
            nx,
            nu,
            np: self.np,
        }))
    }

    fn running_cost(&self, xt: &Vector, u: &Vector) -> Result<f64> {
        let (mu, _, _) = unflatten(xt, self.nx, self.np);
        Ok(self.cost.running(&mu, u, &self.mu_p))
    }

    fn running_cost_grad(&self, xt: &Vector, u: &Vector) -> Result<(Vector, Vector)> {
        let (mu, _, _) = unflatten(xt, self.nx, self.np);
        let mut gx = Vector::zeros(self.state_dim());
        gx.rows_mut(0, self.nx)
            .copy_from(&self.cost.running_grad_x(&mu, u, &self.mu_p));
        Ok((gx, self.cost.running_grad_u(&mu, u, &self.mu_p)))
    }

    fn terminal_cost(&self, xt: &Vector) -> Result<f64> {
        let (mu, _, _) = unflatten(xt, self.nx, self.np);
        Ok(self.cost.terminal(&mu, &self.mu_p))
    }

    fn terminal_cost_grad(&self, xt: &Vector) -> Result<Vector> {
        let (mu, _, _) = unflatten(xt, self.nx, self.np);
        let mut gx = Vector::zeros(self.state_dim());
        gx.rows_mut(0, self.nx)
            .copy_from(&self.cost.terminal_grad_x(&mu, &self.mu_p));
        Ok(gx)
    }

    fn path_constraints(&self, xt: &Vector, u: &Vector) -> Result<Vector> {
        let (mu, sx, _) = unflatten(xt, self.nx, self.np);
        let mut out = Vector::zeros(self.constraints.len());
        for (j, c) in self.constraints.iter().enumerate() {
            let g = c.grad_x(&mu, u);
            let var = (g.transpose() * &sx * &g)[(0, 0)];
            out[j] = tighten(c.eval(&mu, u), var, self.z_path[j]);
        }
        Ok(out)
    }

    fn path_constraint_grads(&self, xt: &Vector, u: &Vector) -> Result<(Matrix, Matrix)> {
        let (mu, sx, _) = unflatten(xt, self.nx, self.np);
        let nh = self.constraints.len();
        let mut gx = Matrix::zeros(nh, self.state_dim());
        let mut gu = Matrix::zeros(nh, self.nu);
        for (j, c) in self.constraints.iter().enumerate() {
            let z = self.z_path[j];
            let g = c.grad_x(&mu, u);
            let var = (g.transpose() * &sx * &g)[(0, 0)];
            let s = var.max(0.0).sqrt();

            // Mean channel: exact chain rule plus the FD derivative of the
            // standard deviation with respect to mu.
            let sigma_of = |m: &Vector, uu: &Vector| -> f64 {
                let gg = c.grad_x(m, uu);
                let v = (gg.transpose() * &sx * &gg)[(0, 0)];
                v.max(0.0).sqrt()
            };
            let mut row_mu = c.grad_x(&mu, u);
            if s > 1e-150 {
                let mut mu_probe = mu.clone();
                for k in 0..self.nx {
                    let h = fd_step(mu[k]);
                    mu_probe[k] = mu[k] + h;
                    let sp = sigma_of(&mu_probe, u);
                    mu_probe[k] = mu[k] - h;
                    let sm = sigma_of(&mu_probe, u);
                    mu_probe[k] = mu[k];
                    row_mu[k] += z * (sp - sm) / (2.0 * h);
                }
            }
            gx.view_mut((j, 0), (1, self.nx))
                .copy_from(&row_mu.transpose());

            // Covariance channel: d/dSigma_x of z sqrt(g' Sigma g) is
            // z/(2s) g g'.
            if s > 1e-150 {
                let outer = &g * g.transpose() * (z / (2.0 * s));
                gx.view_mut((j, self.nx), (1, self.nx * self.nx)).copy_from(
                    &Matrix::from_column_slice(1, self.nx * self.nx, outer.as_slice()),
                );
            }

            let mut row_u = c.grad_u(&mu, u);
            if s > 1e-150 {
                let mut u_probe = u.clone();
                for k in 0..self.nu {
                    let h = fd_step(u[k]);
                    u_probe[k] = u[k] + h;
                    let sp = sigma_of(&mu, &u_probe);
                    u_probe[k] = u[k] - h;
                    let sm = sigma_of(&mu, &u_probe);
                    u_probe[k] = u[k];
                    row_u[k] += z * (sp - sm) / (2.0 * h);
                }
            }
            gu.row_mut(j).copy_from(&row_u.transpose());
        }
        Ok((gx, gu))
    }

    fn terminal_constraints(&self, xt: &Vector) -> Result<Vector> {
        let (mu, sx, _) = unflatten(xt, self.nx, self.np);
        let mut out = Vector::zeros(self.terminal.len());
        for (j, c) in self.terminal.iter().enumerate() {
            let g = c.grad_x(&mu);
            let var = (g.transpose() * &sx * &g)[(0, 0)];
            out[j] = tighten(c.eval(&mu), var, self.z_term[j]);
        }
        Ok(out)
    }

    fn terminal_constraint_grads(&self, xt: &Vector) -> Result<Matrix> {
        let (mu, sx, _) = unflatten(xt, self.nx, self.np);
        let nh = self.terminal.len();
        let mut gx = Matrix::zeros(nh, self.state_dim());
        for (j, c) in self.terminal.iter().enumerate() {
            let z = self.z_term[j];
            let g = c.grad_x(&mu);
            let var = (g.transpose() * &sx * &g)[(0, 0)];
            let s = var.max(0.0).sqrt();
            let sigma_of = |m: &Vector| -> f64 {
                let gg = c.grad_x(m);
                (gg.transpose() * &sx * &gg)[(0, 0)].max(0.0).sqrt()
            };
            let mut row_mu = c.grad_x(&mu);
            if s > 1e-150 {
                let mut mu_probe = mu.clone();
                for k in 0..self.nx {
                    let h = fd_step(mu[k]);
                    mu_probe[k] = mu[k] + h;
                    let sp = sigma_of(&mu_probe);
                    mu_probe[k] = mu[k] - h;
                    let sm = sigma_of(&mu_probe);
                    mu_probe[k] = mu[k];
                    row_mu[k] += z * (sp - sm) / (2.0 * h);
                }
                let outer = &g * g.transpose() * (z / (2.0 * s));
                gx.view_mut((j, self.nx), (1, self.nx * self.nx)).copy_from(
                    &Matrix::from_column_slice(1, self.nx * self.nx, outer.as_slice()),
                );
            }
            gx.view_mut((j, 0), (1, self.nx))
                .copy_from(&row_mu.transpose());
        }
        Ok(gx)
    }

    fn state_summary(&self, xt: &Vector) -> (Vector, Vector) {
        let (mu, sx, _) = unflatten(xt, self.nx, self.np);
        (mu, sx.diagonal().map(|v| v.max(0.0)))
    }

    fn decode_state(&self, xt: &Vector) -> DeterministicState {
        let (mean, cov, cross) = unflatten(xt, self.nx, self.np);
        DeterministicState::Moments { mean, cov, cross }
    }
}

struct MrTaylorNodeJac {
    a: Matrix,
    b: Matrix,
    p: Matrix,
    /// Per mean component: FD of the covariance channels.
    d_mu: Vec<(Matrix, Matrix)>,
    /// Per control component: FD of the covariance channels.
    d_u: Vec<(Matrix, Matrix)>,
    nx: usize,
    nu: usize,
    np: usize,
}

impl MrTaylorNodeJac {
    fn split<'a>(&self, lambda: &'a Vector) -> (Vector, Matrix, Matrix) {
        let nx = self.nx;
        let np = self.np;
        (
            Vector::from(lambda.rows(0, nx)),
            Matrix::from_column_slice(nx, nx, lambda.rows(nx, nx * nx).as_slice()),
            Matrix::from_column_slice(nx, np, lambda.rows(nx + nx * nx, nx * np).as_slice()),
        )
    }
}

impl NodeJacobian for MrTaylorNodeJac {
    fn vjp_state(&self, lambda: &Vector) -> Result<Vector> {
        let (lam_mu, lam_sx, lam_sxp) = self.split(lambda);
        let nx = self.nx;
        let np = self.np;

        // Mean block: exact A^T lam_mu plus the FD contraction of the
        // covariance channels.
        let mut out_mu = self.a.transpose() * &lam_mu;
        for (k, (dsx, dsxp)) in self.d_mu.iter().enumerate() {
            out_mu[k] += lam_sx.dot(dsx) + lam_sxp.dot(dsxp);
        }

        // Sigma_x block: d<lam_sx, A Sx + Sx A'>/dSx = A' lam_sx + lam_sx A.
        let out_sx = self.a.transpose() * &lam_sx + &lam_sx * &self.a;

        // Sigma_xp block: from Sigma_x channel (P Sxp' + Sxp P') and the
        // Sigma_xp channel (A Sxp).
        let out_sxp = if np > 0 {
            lam_sx.transpose() * &self.p + &lam_sx * &self.p + self.a.transpose() * &lam_sxp
        } else {
            Matrix::zeros(nx, 0)
        };

        Ok(flatten(&out_mu, &out_sx, &out_sxp))
    }

    fn vjp_control(&self, lambda: &Vector) -> Result<Vector> {
        let (lam_mu, lam_sx, lam_sxp) = self.split(lambda);
        let mut out = self.b.transpose() * &lam_mu;
        for (k, (dsx, dsxp)) in self.d_u.iter().enumerate() {
            out[k] += lam_sx.dot(dsx) + lam_sxp.dot(dsxp);
        }
        debug_assert_eq!(out.len(), self.nu);
        Ok(out)
    }
}
