//! Moment-based representation with sampling-based propagation.
//!
//! Every evaluation of the dynamics, cost or constraints regenerates a
//! joint `(x, p)` point set from the current `(mu_x, Sigma_x, Sigma_xp)`
//! and the fixed parameter moments, pushes it through the user functions
//! and recombines moments. Resampling makes an exact chain rule
//! impractical, so all sensitivities are central finite differences.

use std::sync::Arc;

use crate::chance::{tighten, ConstraintApprox};
use crate::gp::GpModel;
use crate::reformulate::fd::{fd_grad, fd_jacobian, fd_vjp};
use crate::reformulate::mr_taylor::{flatten, stack_z, unflatten};
use crate::reformulate::{
    path_z_coeffs, terminal_z_coeffs, CostModel, DetOcp, DeterministicState, NodeJacobian,
    PathConstraint, StochasticProblem, SystemModel, TerminalConstraint,
};
use crate::transform::{generate_points_from_moments, PointSet, PropagationMethod};
use crate::{Matrix, Result, Vector};

/// Deterministic OCP in the moment-based representation with resampling.
pub struct MrSamplingOcp {
    sys: Arc<dyn SystemModel>,
    cost: Arc<dyn CostModel>,
    constraints: Vec<Arc<PathConstraint>>,
    terminal: Vec<Arc<TerminalConstraint>>,
    gp: Option<Arc<GpModel>>,
    method: PropagationMethod,
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

impl MrSamplingOcp {
    pub(crate) fn build(
        problem: &StochasticProblem,
        method: &PropagationMethod,
        approx: ConstraintApprox,
    ) -> Result<Self> {
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
            method: *method,
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

    /// Joint `(x, p)` point set for the current moments.
    fn resample(&self, mu: &Vector, sx: &Matrix, sxp: &Matrix) -> Result<PointSet> {
        let nd = self.nx + self.np;
        let mut mean = Vector::zeros(nd);
        mean.rows_mut(0, self.nx).copy_from(mu);
        mean.rows_mut(self.nx, self.np).copy_from(&self.mu_p);
        let mut cov = Matrix::zeros(nd, nd);
        cov.view_mut((0, 0), (self.nx, self.nx)).copy_from(sx);
        cov.view_mut((0, self.nx), (self.nx, self.np))
            .copy_from(sxp);
        cov.view_mut((self.nx, 0), (self.np, self.nx))
            .copy_from(&sxp.transpose());
        cov.view_mut((self.nx, self.nx), (self.np, self.np))
            .copy_from(&self.sigma_p);
        generate_points_from_moments(&self.method, &mean, &cov)
    }

    fn split_point(&self, set: &PointSet, i: usize) -> (Vector, Vector) {
        let col = set.points.column(i);
        (
            Vector::from(col.rows(0, self.nx)),
            Vector::from(col.rows(self.nx, self.np)),
        )
    }

    /// Drift at a sample, including the GP residual mean.
    fn drift_at(&self, x: &Vector, u: &Vector, p: &Vector, t: f64) -> Vector {
        let mut f = self.sys.f(x, u, p, t);
        if let Some(gp) = &self.gp {
            f += gp.predict_mean(&stack_z(x, u));
        }
        f
    }
}

impl DetOcp for MrSamplingOcp {
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
        let set = self.resample(&mu, &sx, &sxp)?;
        let ns = set.len();

        let mut values = Matrix::zeros(self.nx, ns);
        for i in 0..ns {
            let (x, p) = self.split_point(&set, i);
            values.column_mut(i).copy_from(&self.drift_at(&x, u, &p, t));
        }
        // E[f], Cov[f, x], Cov[f, p] from the weighted points, assembled as
        // matrix products over the deviation matrices.
        let mut ef = Vector::zeros(self.nx);
        for i in 0..ns {
            ef.axpy(set.w_mean[i], &values.column(i), 1.0);
        }
        let mut f_dev_w = values;
        let mut x_dev = Matrix::zeros(self.nx, ns);
        let mut p_dev = Matrix::zeros(self.np, ns);
        for i in 0..ns {
            let mut fc = f_dev_w.column_mut(i);
            fc -= &ef;
            fc *= set.w_cov[i];
            let mut xc = x_dev.column_mut(i);
            xc.copy_from(&set.points.view((0, i), (self.nx, 1)));
            xc -= &mu;
            if self.np > 0 {
                let mut pc = p_dev.column_mut(i);
                pc.copy_from(&set.points.view((self.nx, i), (self.np, 1)));
                pc -= &self.mu_p;
            }
        }
        let cov_fx = &f_dev_w * x_dev.transpose();
        let cov_fp = &f_dev_w * p_dev.transpose();
        let mut dsx = &cov_fx + cov_fx.transpose() + &self.sigma_w2;
        if let Some(gp) = &self.gp {
            let (_, var) = gp.predict(&stack_z(&mu, u));
            for k in 0..self.nx {
                dsx[(k, k)] += var[k];
            }
        }
        Ok(flatten(&ef, &dsx, &cov_fp))
    }

    fn dynamics_jacobian<'a>(
        &'a self,
        xt: &Vector,
        u: &Vector,
        t: f64,
    ) -> Result<Box<dyn NodeJacobian + 'a>> {
        Ok(Box::new(MrSamplingNodeJac {
            ocp: self,
            xt: xt.clone(),
            u: u.clone(),
            t,
        }))
    }

    fn running_cost(&self, xt: &Vector, u: &Vector) -> Result<f64> {
        let (mu, sx, sxp) = unflatten(xt, self.nx, self.np);
        let set = self.resample(&mu, &sx, &sxp)?;
        Ok((0..set.len())
            .map(|i| {
                let (x, p) = self.split_point(&set, i);
                set.w_mean[i] * self.cost.running(&x, u, &p)
            })
            .sum())
    }

    fn running_cost_grad(&self, xt: &Vector, u: &Vector) -> Result<(Vector, Vector)> {
        let gx = fd_grad(|x| self.running_cost(x, u), xt)?;
        let gu = fd_grad(|uu| self.running_cost(xt, uu), u)?;
        Ok((gx, gu))
    }

    fn terminal_cost(&self, xt: &Vector) -> Result<f64> {
        let (mu, sx, sxp) = unflatten(xt, self.nx, self.np);
        let set = self.resample(&mu, &sx, &sxp)?;
        Ok((0..set.len())
            .map(|i| {
                let (x, p) = self.split_point(&set, i);
                set.w_mean[i] * self.cost.terminal(&x, &p)
            })
            .sum())
    }

    fn terminal_cost_grad(&self, xt: &Vector) -> Result<Vector> {
        fd_grad(|x| self.terminal_cost(x), xt)
    }

    fn path_constraints(&self, xt: &Vector, u: &Vector) -> Result<Vector> {
        let (mu, sx, sxp) = unflatten(xt, self.nx, self.np);
        let set = self.resample(&mu, &sx, &sxp)?;
        let ns = set.len();
        let mut out = Vector::zeros(self.constraints.len());
        for (j, c) in self.constraints.iter().enumerate() {
            let h: Vec<f64> = (0..ns)
                .map(|i| {
                    let (x, _) = self.split_point(&set, i);
                    c.eval(&x, u)
                })
                .collect();
            let mu_h: f64 = h.iter().zip(&set.w_mean).map(|(hi, w)| w * hi).sum();
            let var: f64 = h
                .iter()
                .zip(&set.w_cov)
                .map(|(hi, w)| w * (hi - mu_h) * (hi - mu_h))
                .sum();
            out[j] = tighten(mu_h, var, self.z_path[j]);
        }
        Ok(out)
    }

    fn path_constraint_grads(&self, xt: &Vector, u: &Vector) -> Result<(Matrix, Matrix)> {
        let nh = self.constraints.len();
        let gx = fd_jacobian(|x| self.path_constraints(x, u), xt, nh)?;
        let gu = fd_jacobian(|uu| self.path_constraints(xt, uu), u, nh)?;
        Ok((gx, gu))
    }

    fn terminal_constraints(&self, xt: &Vector) -> Result<Vector> {
        let (mu, sx, sxp) = unflatten(xt, self.nx, self.np);
        let set = self.resample(&mu, &sx, &sxp)?;
        let ns = set.len();
        let mut out = Vector::zeros(self.terminal.len());
        for (j, c) in self.terminal.iter().enumerate() {
            let h: Vec<f64> = (0..ns)
                .map(|i| {
                    let (x, _) = self.split_point(&set, i);
                    c.eval(&x)
                })
                .collect();
            let mu_h: f64 = h.iter().zip(&set.w_mean).map(|(hi, w)| w * hi).sum();
            let var: f64 = h
                .iter()
                .zip(&set.w_cov)
                .map(|(hi, w)| w * (hi - mu_h) * (hi - mu_h))
                .sum();
            out[j] = tighten(mu_h, var, self.z_term[j]);
        }
        Ok(out)
    }

    fn terminal_constraint_grads(&self, xt: &Vector) -> Result<Matrix> {
        fd_jacobian(|x| self.terminal_constraints(x), xt, self.terminal.len())
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

struct MrSamplingNodeJac<'a> {
    ocp: &'a MrSamplingOcp,
    xt: Vector,
    u: Vector,
    t: f64,
}

impl NodeJacobian for MrSamplingNodeJac<'_> {
    fn vjp_state(&self, lambda: &Vector) -> Result<Vector> {
        fd_vjp(|x| self.ocp.dynamics(x, &self.u, self.t), &self.xt, lambda)
    }

    fn vjp_control(&self, lambda: &Vector) -> Result<Vector> {
        fd_vjp(
            |uu| self.ocp.dynamics(&self.xt, uu, self.t),
            &self.u,
            lambda,
        )
    }
}
