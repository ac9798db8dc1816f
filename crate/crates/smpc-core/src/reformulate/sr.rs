//! Sampling-based representation: the deterministic state stacks one copy
//! of the system state per propagation point of the joint `(x0, p)`
//! distribution. Point pairing is fixed at build time; only Monte-Carlo
//! methods redraw between MPC steps via the step seed.

use std::sync::Arc;

use rayon::prelude::*;

use crate::chance::{tighten, ConstraintApprox};
use crate::distributions::JointDistribution;
use crate::reformulate::{
    path_z_coeffs, reseed_method, terminal_z_coeffs, ConstraintMode, CostModel, DetOcp,
    DeterministicState, NodeJacobian, PathConstraint, StochasticProblem, SystemModel,
    TerminalConstraint,
};
use crate::transform::{generate_points, PropagationMethod};
use crate::{Matrix, Result, Vector};

/// Threshold on the sample count above which per-sample work parallelizes.
const PAR_SAMPLES: usize = 256;

/// Deterministic OCP in the sampling-based representation.
pub struct SrOcp {
    sys: Arc<dyn SystemModel>,
    cost: Arc<dyn CostModel>,
    constraints: Vec<Arc<PathConstraint>>,
    terminal: Vec<Arc<TerminalConstraint>>,
    nx: usize,
    nu: usize,
    ns: usize,
    p_samples: Matrix,
    w_mean: Vec<f64>,
    w_cov: Vec<f64>,
    x0_flat: Vector,
    z_path: Vec<f64>,
    z_term: Vec<f64>,
    mode: ConstraintMode,
    u_min: Vector,
    u_max: Vector,
    horizon: f64,
}

impl SrOcp {
    pub(crate) fn build(
        problem: &StochasticProblem,
        method: &PropagationMethod,
        approx: ConstraintApprox,
        mode: ConstraintMode,
        step_seed: u64,
    ) -> Result<Self> {
        let nx = problem.system.nx();
        let np = problem.system.np();
        let joint = JointDistribution::stack(&problem.x0, &problem.params);
        let method = reseed_method(method, step_seed);
        let set = generate_points(&method, &joint)?;
        let ns = set.len();

        // Split the stacked points into state and parameter blocks.
        let mut x0_flat = Vector::zeros(nx * ns);
        let mut p_samples = Matrix::zeros(np, ns);
        for i in 0..ns {
            x0_flat
                .rows_mut(i * nx, nx)
                .copy_from(&set.points.view((0, i), (nx, 1)));
            p_samples
                .column_mut(i)
                .copy_from(&set.points.view((nx, i), (np, 1)));
        }

        Ok(Self {
            sys: Arc::clone(&problem.system),
            cost: Arc::clone(&problem.cost),
            constraints: problem.constraints.iter().map(Arc::clone).collect(),
            terminal: problem
                .terminal_constraints
                .iter()
                .map(Arc::clone)
                .collect(),
            nx,
            nu: problem.system.nu(),
            ns,
            p_samples,
            w_mean: set.w_mean,
            w_cov: set.w_cov,
            x0_flat,
            z_path: path_z_coeffs(&problem.constraints, approx)?,
            z_term: terminal_z_coeffs(&problem.terminal_constraints, approx)?,
            mode,
            u_min: problem.u_min.clone(),
            u_max: problem.u_max.clone(),
            horizon: problem.horizon,
        })
    }

    /// Number of propagation samples carried by the state.
    pub fn n_samples(&self) -> usize {
        self.ns
    }

    fn sample(&self, xt: &Vector, i: usize) -> Vector {
        Vector::from(xt.rows(i * self.nx, self.nx))
    }

    fn param(&self, i: usize) -> Vector {
        Vector::from(self.p_samples.column(i))
    }

    /// Weighted mean and covariance of per-sample constraint values plus the
    /// per-sample gradient bookkeeping shared by value and gradient paths.
    fn tightened_value(&self, h: &[f64], z: f64) -> (f64, f64, f64) {
        let mu: f64 = h.iter().zip(&self.w_mean).map(|(hi, w)| w * hi).sum();
        let var: f64 = h
            .iter()
            .zip(&self.w_cov)
            .map(|(hi, w)| w * (hi - mu) * (hi - mu))
            .sum();
        (tighten(mu, var, z), mu, var)
    }
}

impl DetOcp for SrOcp {
    fn state_dim(&self) -> usize {
        self.nx * self.ns
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
        match self.mode {
            ConstraintMode::MomentTightened => self.constraints.len(),
            ConstraintMode::PerSample => self.constraints.len() * self.ns,
        }
    }
    fn n_terminal_constraints(&self) -> usize {
        match self.mode {
            ConstraintMode::MomentTightened => self.terminal.len(),
            ConstraintMode::PerSample => self.terminal.len() * self.ns,
        }
    }

    fn dynamics(&self, xt: &Vector, u: &Vector, t: f64) -> Result<Vector> {
        let mut out = Vector::zeros(self.state_dim());
        if self.ns >= PAR_SAMPLES {
            let cols: Vec<Vector> = (0..self.ns)
                .into_par_iter()
                .map(|i| self.sys.f(&self.sample(xt, i), u, &self.param(i), t))
                .collect();
            for (i, col) in cols.into_iter().enumerate() {
                out.rows_mut(i * self.nx, self.nx).copy_from(&col);
            }
        } else {
            let mut x = Vector::zeros(self.nx);
            let mut p = Vector::zeros(self.p_samples.nrows());
            let slice = out.as_mut_slice();
            for i in 0..self.ns {
                x.copy_from(&xt.rows(i * self.nx, self.nx));
                p.copy_from(&self.p_samples.column(i));
                self.sys
                    .f_into(&x, u, &p, t, &mut slice[i * self.nx..(i + 1) * self.nx]);
            }
        }
        Ok(out)
    }

    fn dynamics_jacobian<'a>(
        &'a self,
        xt: &Vector,
        u: &Vector,
        t: f64,
    ) -> Result<Box<dyn NodeJacobian + 'a>> {
        Ok(Box::new(SrNodeJac {
            ocp: self,
            xt: xt.clone(),
            u: u.clone(),
            t,
        }))
    }

    fn running_cost(&self, xt: &Vector, u: &Vector) -> Result<f64> {
        let mut x = Vector::zeros(self.nx);
        let mut p = Vector::zeros(self.p_samples.nrows());
        let mut acc = 0.0;
        for i in 0..self.ns {
            x.copy_from(&xt.rows(i * self.nx, self.nx));
            p.copy_from(&self.p_samples.column(i));
            acc += self.w_mean[i] * self.cost.running(&x, u, &p);
        }
        Ok(acc)
    }

    fn running_cost_grad(&self, xt: &Vector, u: &Vector) -> Result<(Vector, Vector)> {
        let mut gx = Vector::zeros(self.state_dim());
        let mut gu = Vector::zeros(self.nu);
        let mut x = Vector::zeros(self.nx);
        let mut p = Vector::zeros(self.p_samples.nrows());
        for i in 0..self.ns {
            x.copy_from(&xt.rows(i * self.nx, self.nx));
            p.copy_from(&self.p_samples.column(i));
            let w = self.w_mean[i];
            gx.rows_mut(i * self.nx, self.nx)
                .copy_from(&(self.cost.running_grad_x(&x, u, &p) * w));
            gu.axpy(w, &self.cost.running_grad_u(&x, u, &p), 1.0);
        }
        Ok((gx, gu))
    }

    fn terminal_cost(&self, xt: &Vector) -> Result<f64> {
        Ok((0..self.ns)
            .map(|i| self.w_mean[i] * self.cost.terminal(&self.sample(xt, i), &self.param(i)))
            .sum())
    }

    fn terminal_cost_grad(&self, xt: &Vector) -> Result<Vector> {
        let mut gx = Vector::zeros(self.state_dim());
        for i in 0..self.ns {
            let x = self.sample(xt, i);
            gx.rows_mut(i * self.nx, self.nx)
                .copy_from(&(self.cost.terminal_grad_x(&x, &self.param(i)) * self.w_mean[i]));
        }
        Ok(gx)
    }

    fn path_constraints(&self, xt: &Vector, u: &Vector) -> Result<Vector> {
        let mut out = Vector::zeros(self.n_path_constraints());
        match self.mode {
            ConstraintMode::MomentTightened => {
                for (j, c) in self.constraints.iter().enumerate() {
                    let h: Vec<f64> = (0..self.ns)
                        .map(|i| c.eval(&self.sample(xt, i), u))
                        .collect();
                    out[j] = self.tightened_value(&h, self.z_path[j]).0;
                }
            }
            ConstraintMode::PerSample => {
                for (j, c) in self.constraints.iter().enumerate() {
                    for i in 0..self.ns {
                        out[j * self.ns + i] = c.eval(&self.sample(xt, i), u);
                    }
                }
            }
        }
        Ok(out)
    }

    fn path_constraint_grads(&self, xt: &Vector, u: &Vector) -> Result<(Matrix, Matrix)> {
        let nh = self.n_path_constraints();
        let mut gx = Matrix::zeros(nh, self.state_dim());
        let mut gu = Matrix::zeros(nh, self.nu);
        match self.mode {
            ConstraintMode::MomentTightened => {
                for (j, c) in self.constraints.iter().enumerate() {
                    let z = self.z_path[j];
                    let h: Vec<f64> = (0..self.ns)
                        .map(|i| c.eval(&self.sample(xt, i), u))
                        .collect();
                    let (_, mu, var) = self.tightened_value(&h, z);
                    let s = var.max(0.0).sqrt();
                    // c_sum = sum_k w_cov_k (h_k - mu), needed because mean
                    // and covariance weights differ.
                    let c_sum: f64 = h.iter().zip(&self.w_cov).map(|(hk, w)| w * (hk - mu)).sum();
                    let mut du_mean = Vector::zeros(self.nu);
                    let mut du_var = Vector::zeros(self.nu);
                    for i in 0..self.ns {
                        let x = self.sample(xt, i);
                        let gxi = c.grad_x(&x, u);
                        let gui = c.grad_u(&x, u);
                        // d var / d x_i = 2 w_cov_i (h_i - mu) g_i
                        //               - 2 c_sum w_mean_i g_i
                        let dvar_scale =
                            2.0 * (self.w_cov[i] * (h[i] - mu) - c_sum * self.w_mean[i]);
                        let mut block = gxi.clone() * self.w_mean[i];
                        if s > 1e-150 {
                            block.axpy(z * dvar_scale / (2.0 * s), &gxi, 1.0);
                        }
                        gx.view_mut((j, i * self.nx), (1, self.nx))
                            .copy_from(&block.transpose());
                        du_mean.axpy(self.w_mean[i], &gui, 1.0);
                        du_var.axpy(dvar_scale, &gui, 1.0);
                    }
                    let mut row = du_mean;
                    if s > 1e-150 {
                        row.axpy(z / (2.0 * s), &du_var, 1.0);
                    }
                    gu.row_mut(j).copy_from(&row.transpose());
                }
            }
            ConstraintMode::PerSample => {
                for (j, c) in self.constraints.iter().enumerate() {
                    for i in 0..self.ns {
                        let x = self.sample(xt, i);
                        let row = j * self.ns + i;
                        gx.view_mut((row, i * self.nx), (1, self.nx))
                            .copy_from(&c.grad_x(&x, u).transpose());
                        gu.row_mut(row).copy_from(&c.grad_u(&x, u).transpose());
                    }
                }
            }
        }
        Ok((gx, gu))
    }

    fn terminal_constraints(&self, xt: &Vector) -> Result<Vector> {
        let mut out = Vector::zeros(self.n_terminal_constraints());
        match self.mode {
            ConstraintMode::MomentTightened => {
                for (j, c) in self.terminal.iter().enumerate() {
                    let h: Vec<f64> = (0..self.ns).map(|i| c.eval(&self.sample(xt, i))).collect();
                    out[j] = self.tightened_value(&h, self.z_term[j]).0;
                }
            }
            ConstraintMode::PerSample => {
                for (j, c) in self.terminal.iter().enumerate() {
                    for i in 0..self.ns {
                        out[j * self.ns + i] = c.eval(&self.sample(xt, i));
                    }
                }
            }
        }
        Ok(out)
    }

    fn terminal_constraint_grads(&self, xt: &Vector) -> Result<Matrix> {
        let nh = self.n_terminal_constraints();
        let mut gx = Matrix::zeros(nh, self.state_dim());
        match self.mode {
            ConstraintMode::MomentTightened => {
                for (j, c) in self.terminal.iter().enumerate() {
                    let z = self.z_term[j];
                    let h: Vec<f64> = (0..self.ns).map(|i| c.eval(&self.sample(xt, i))).collect();
                    let (_, mu, var) = self.tightened_value(&h, z);
                    let s = var.max(0.0).sqrt();
                    let c_sum: f64 = h.iter().zip(&self.w_cov).map(|(hk, w)| w * (hk - mu)).sum();
                    for i in 0..self.ns {
                        let gxi = c.grad_x(&self.sample(xt, i));
                        let dvar_scale =
                            2.0 * (self.w_cov[i] * (h[i] - mu) - c_sum * self.w_mean[i]);
                        let mut block = gxi.clone() * self.w_mean[i];
                        if s > 1e-150 {
                            block.axpy(z * dvar_scale / (2.0 * s), &gxi, 1.0);
                        }
                        gx.view_mut((j, i * self.nx), (1, self.nx))
                            .copy_from(&block.transpose());
                    }
                }
            }
            ConstraintMode::PerSample => {
                for (j, c) in self.terminal.iter().enumerate() {
                    for i in 0..self.ns {
                        gx.view_mut((j * self.ns + i, i * self.nx), (1, self.nx))
                            .copy_from(&c.grad_x(&self.sample(xt, i)).transpose());
                    }
                }
            }
        }
        Ok(gx)
    }

    fn state_summary(&self, xt: &Vector) -> (Vector, Vector) {
        let mut mean = Vector::zeros(self.nx);
        for i in 0..self.ns {
            mean.axpy(self.w_mean[i], &self.sample(xt, i), 1.0);
        }
        let mut var = Vector::zeros(self.nx);
        for i in 0..self.ns {
            let d = self.sample(xt, i) - &mean;
            for k in 0..self.nx {
                var[k] += self.w_cov[i] * d[k] * d[k];
            }
        }
        (mean, var.map(|v| v.max(0.0)))
    }

    fn decode_state(&self, xt: &Vector) -> DeterministicState {
        let mut states = Matrix::zeros(self.nx, self.ns);
        for i in 0..self.ns {
            states
                .column_mut(i)
                .copy_from(&xt.rows(i * self.nx, self.nx));
        }
        DeterministicState::Samples { states }
    }
}

/// Streams per-sample Jacobian blocks through one small scratch matrix
/// instead of materializing the block-diagonal Jacobian.
struct SrNodeJac<'a> {
    ocp: &'a SrOcp,
    xt: Vector,
    u: Vector,
    t: f64,
}

impl SrNodeJac<'_> {
    fn accumulate(&self, lambda: &Vector, want_state: bool) -> (Vector, Vector) {
        let (nx, nu, ns) = (self.ocp.nx, self.ocp.nu, self.ocp.ns);
        let mut out_x = Vector::zeros(if want_state { nx * ns } else { 0 });
        let mut out_u = Vector::zeros(nu);
        let mut a = Matrix::zeros(nx, nx);
        let mut b = Matrix::zeros(nx, nu);
        let mut x = Vector::zeros(nx);
        let mut p = Vector::zeros(self.ocp.p_samples.nrows());
        for i in 0..ns {
            x.copy_from(&self.xt.rows(i * nx, nx));
            p.copy_from(&self.ocp.p_samples.column(i));
            let lam_i = lambda.rows(i * nx, nx);
            if want_state {
                self.ocp
                    .sys
                    .jac_x_into(&x, &self.u, &p, self.t, &mut a.view_mut((0, 0), (nx, nx)));
                out_x.rows_mut(i * nx, nx).gemv_tr(1.0, &a, &lam_i, 0.0);
            }
            self.ocp
                .sys
                .jac_u_into(&x, &self.u, &p, self.t, &mut b.view_mut((0, 0), (nx, nu)));
            out_u.gemv_tr(1.0, &b, &lam_i, 1.0);
        }
        (out_x, out_u)
    }
}

impl NodeJacobian for SrNodeJac<'_> {
    fn vjp_state(&self, lambda: &Vector) -> Result<Vector> {
        Ok(self.accumulate(lambda, true).0)
    }

    fn vjp_control(&self, lambda: &Vector) -> Result<Vector> {
        Ok(self.accumulate(lambda, false).1)
    }

    fn vjp_both(&self, lambda: &Vector) -> Result<(Vector, Vector)> {
        Ok(self.accumulate(lambda, true))
    }
}
