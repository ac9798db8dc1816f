//! Augmented-Lagrangian projected-gradient solver on a fixed time grid.
//!
//! The deterministic OCP is discretized with piecewise-linear controls on a
//! uniform grid and explicit-trapezoidal (Heun) integration. Inequality
//! constraints enter an augmented Lagrangian with pointwise multipliers on
//! the grid; the inner loop takes projected gradient steps where the
//! gradient comes from the exact adjoint of the discrete Heun scheme, so it
//! matches finite differences of the discrete cost to rounding accuracy.

use crate::distributions::JointDistribution;
use crate::reformulate::{build, BuildWarning, DetOcp, Representation};
use crate::{Error, Matrix, Result, Vector};

/// Solver parameters.
///
/// The fixed iteration budget (`outer_iterations` by `inner_iterations`)
/// follows the real-time iteration scheme; set `grad_tol` to stop the inner
/// loop early once the projected gradient is small.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Number of grid points `N >= 2`.
    pub grid_points: usize,
    /// Augmented-Lagrangian (outer) iterations.
    pub outer_iterations: usize,
    /// Gradient (inner) iterations per outer iteration.
    pub inner_iterations: usize,
    /// Initial penalty parameter.
    pub rho0: f64,
    /// Penalty growth factor (> 1).
    pub gamma: f64,
    /// Line-search contraction factor in (0, 1).
    pub contraction: f64,
    /// Armijo constant.
    pub armijo: f64,
    /// Maximum number of line-search contractions.
    pub max_line_search: usize,
    /// Optional projected-gradient tolerance for early inner termination.
    pub grad_tol: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid_points: 20,
            outer_iterations: 2,
            inner_iterations: 2,
            rho0: 1.0,
            gamma: 5.0,
            contraction: 0.5,
            armijo: 1e-4,
            max_line_search: 30,
            grad_tol: None,
        }
    }
}

/// Multipliers, penalties and the control trajectory carried between solves.
#[derive(Debug, Clone)]
pub struct WarmStart {
    /// Control values on the grid (`Nu x N`).
    pub u: Matrix,
    /// Path-constraint multipliers on the grid (`Nh x N`).
    pub multipliers: Matrix,
    /// Terminal-constraint multipliers.
    pub terminal_multipliers: Vector,
    /// Per-constraint penalty parameters.
    pub penalties: Vector,
    /// Per-terminal-constraint penalty parameters.
    pub terminal_penalties: Vector,
    /// Grid-max violation of each path constraint at the last solve.
    pub prev_violation: Vector,
    /// Violation of each terminal constraint at the last solve.
    pub prev_terminal_violation: Vector,
}

/// Per-solve diagnostics.
#[derive(Debug, Clone, Default)]
pub struct SolveDiagnostics {
    /// Augmented cost after each accepted inner iteration.
    pub inner_costs: Vec<f64>,
    /// Projected-gradient sup-norm per inner iteration.
    pub gradient_norms: Vec<f64>,
    /// True when a line search exhausted its contractions.
    pub line_search_stalled: bool,
}

/// Result of one OCP solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Grid times.
    pub times: Vec<f64>,
    /// Control trajectory on the grid (`Nu x N`, piecewise linear).
    pub u: Matrix,
    /// Deterministic state trajectory on the grid.
    pub states: Vec<Vector>,
    /// Cost value (terminal plus integral, without penalty terms).
    pub cost: f64,
    /// Augmented cost at the solution.
    pub augmented_cost: f64,
    /// Per-path-constraint maximum tightened value over the grid.
    pub max_path_values: Vector,
    /// Terminal tightened constraint values.
    pub terminal_values: Vector,
    /// Multipliers and penalties for warm starting the next solve.
    pub warm: WarmStart,
    /// Iteration diagnostics.
    pub diagnostics: SolveDiagnostics,
}

impl SolveResult {
    /// Piecewise-linear evaluation of the control at time `t`.
    pub fn control_at(&self, t: f64) -> Vector {
        interp_columns(&self.times, &self.u, t)
    }
}

/// Piecewise-linear interpolation of matrix columns over grid times.
fn interp_columns(times: &[f64], values: &Matrix, t: f64) -> Vector {
    let n = times.len();
    if t <= times[0] {
        return Vector::from(values.column(0));
    }
    if t >= times[n - 1] {
        return Vector::from(values.column(n - 1));
    }
    let k = match times.binary_search_by(|x| x.total_cmp(&t)) {
        Ok(i) => return Vector::from(values.column(i)),
        Err(i) => i - 1,
    };
    let w = (t - times[k]) / (times[k + 1] - times[k]);
    Vector::from(values.column(k)) * (1.0 - w) + Vector::from(values.column(k + 1)) * w
}

/// Integrates the deterministic dynamics with fixed-step Heun over `times`.
pub fn integrate_forward(
    ocp: &dyn DetOcp,
    u: &Matrix,
    x0: &Vector,
    times: &[f64],
) -> Result<Vec<Vector>> {
    let data = forward_pass(ocp, u, x0, times, false, None)?;
    Ok(data.states)
}

struct ForwardData {
    states: Vec<Vector>,
    /// Euler predictor points, one per interval (only when requested).
    stages: Vec<Vector>,
    /// Tightened path-constraint values per node (`Nh x N`).
    path_values: Matrix,
    /// Running cost per node.
    running: Vec<f64>,
    /// Terminal cost.
    terminal: f64,
    /// Terminal constraint values.
    terminal_values: Vector,
}

fn forward_pass(
    ocp: &dyn DetOcp,
    u: &Matrix,
    x0: &Vector,
    times: &[f64],
    keep_stages: bool,
    mut nan_guard: Option<&mut bool>,
) -> Result<ForwardData> {
    let n = times.len();
    let nh = ocp.n_path_constraints();
    let mut states = Vec::with_capacity(n);
    let mut stages = Vec::new();
    let mut path_values = Matrix::zeros(nh, n);
    let mut running = vec![0.0; n];
    states.push(x0.clone());
    for k in 0..n {
        let xk = states[k].clone();
        if xk.iter().any(|v| !v.is_finite()) {
            if let Some(flag) = nan_guard.as_deref_mut() {
                *flag = true;
            }
            return Err(Error::Integration { t: times[k] });
        }
        let uk = Vector::from(u.column(k));
        running[k] = ocp.running_cost(&xk, &uk)?;
        if nh > 0 {
            path_values
                .column_mut(k)
                .copy_from(&ocp.path_constraints(&xk, &uk)?);
        }
        if k + 1 < n {
            let h = times[k + 1] - times[k];
            let k1 = ocp.dynamics(&xk, &uk, times[k])?;
            let xp = &xk + &k1 * h;
            let uk1 = Vector::from(u.column(k + 1));
            let k2 = ocp.dynamics(&xp, &uk1, times[k + 1])?;
            let next = &xk + (k1 + k2) * (0.5 * h);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integration { t: times[k + 1] });
            }
            if keep_stages {
                stages.push(xp);
            }
            states.push(next);
        }
    }
    let xl = &states[n - 1];
    let terminal = ocp.terminal_cost(xl)?;
    let terminal_values = ocp.terminal_constraints(xl)?;
    Ok(ForwardData {
        states,
        stages,
        path_values,
        running,
        terminal,
        terminal_values,
    })
}

/// Augmented penalty `(max(0, lam + rho h)^2 - lam^2) / (2 rho)`.
fn penalty(h: f64, lam: f64, rho: f64) -> f64 {
    let m = (lam + rho * h).max(0.0);
    (m * m - lam * lam) / (2.0 * rho)
}

/// Derivative of the penalty with respect to `h`.
fn penalty_weight(h: f64, lam: f64, rho: f64) -> f64 {
    (lam + rho * h).max(0.0)
}

/// Trapezoidal quadrature weights on the grid.
fn quad_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for k in 0..n - 1 {
        let h = times[k + 1] - times[k];
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    w
}

fn augmented_from_data(
    data: &ForwardData,
    times: &[f64],
    lam: &Matrix,
    lam_t: &Vector,
    rho: &Vector,
    rho_t: &Vector,
) -> (f64, f64) {
    let n = times.len();
    let nh = lam.nrows();
    let w = quad_weights(times);
    let mut cost = data.terminal;
    let mut aug = data.terminal;
    for (j, &lt) in lam_t.iter().enumerate() {
        aug += penalty(data.terminal_values[j], lt, rho_t[j]);
    }
    for k in 0..n {
        cost += w[k] * data.running[k];
        let mut g = data.running[k];
        for j in 0..nh {
            g += penalty(data.path_values[(j, k)], lam[(j, k)], rho[j]);
        }
        aug += w[k] * g;
    }
    (cost, aug)
}

/// Augmented cost `J_A(u)` for fixed multipliers and penalties.
pub fn augmented_cost(
    ocp: &dyn DetOcp,
    times: &[f64],
    u: &Matrix,
    lam: &Matrix,
    lam_t: &Vector,
    rho: &Vector,
    rho_t: &Vector,
) -> Result<f64> {
    let data = forward_pass(ocp, u, &ocp.initial_state(), times, false, None)?;
    Ok(augmented_from_data(&data, times, lam, lam_t, rho, rho_t).1)
}

/// Gradient of the augmented cost with respect to the gridded controls,
/// by backward integration of the discrete Heun adjoint.
pub fn augmented_gradient(
    ocp: &dyn DetOcp,
    times: &[f64],
    u: &Matrix,
    lam: &Matrix,
    lam_t: &Vector,
    rho: &Vector,
    rho_t: &Vector,
) -> Result<Matrix> {
    let data = forward_pass(ocp, u, &ocp.initial_state(), times, true, None)?;
    gradient_from_data(ocp, &data, times, u, lam, lam_t, rho, rho_t)
}

#[allow(clippy::too_many_arguments)]
fn gradient_from_data(
    ocp: &dyn DetOcp,
    data: &ForwardData,
    times: &[f64],
    u: &Matrix,
    lam: &Matrix,
    lam_t: &Vector,
    rho: &Vector,
    rho_t: &Vector,
) -> Result<Matrix> {
    let n = times.len();
    let nh = ocp.n_path_constraints();
    let nu = ocp.control_dim();
    let w = quad_weights(times);
    let mut grad = Matrix::zeros(nu, n);

    // Node-local cost gradient: running cost plus weighted constraint rows.
    let node_grad = |k: usize| -> Result<(Vector, Vector)> {
        let xk = &data.states[k];
        let uk = Vector::from(u.column(k));
        let (mut gx, mut gu) = ocp.running_cost_grad(xk, &uk)?;
        if nh > 0 {
            let (cx, cu) = ocp.path_constraint_grads(xk, &uk)?;
            for j in 0..nh {
                let pw = penalty_weight(data.path_values[(j, k)], lam[(j, k)], rho[j]);
                if pw != 0.0 {
                    gx.axpy(pw, &Vector::from(cx.row(j).transpose()), 1.0);
                    gu.axpy(pw, &Vector::from(cu.row(j).transpose()), 1.0);
                }
            }
        }
        Ok((gx, gu))
    };

    // Terminal condition of the adjoint.
    let xl = &data.states[n - 1];
    let mut costate = ocp.terminal_cost_grad(xl)?;
    if ocp.n_terminal_constraints() > 0 {
        let ct = ocp.terminal_constraint_grads(xl)?;
        for (j, &lt) in lam_t.iter().enumerate() {
            let pw = penalty_weight(data.terminal_values[j], lt, rho_t[j]);
            if pw != 0.0 {
                costate.axpy(pw, &Vector::from(ct.row(j).transpose()), 1.0);
            }
        }
    }
    let (gx_l, gu_l) = node_grad(n - 1)?;
    costate += gx_l * w[n - 1];
    grad.column_mut(n - 1).copy_from(&(gu_l * w[n - 1]));

    for k in (0..n - 1).rev() {
        let h = times[k + 1] - times[k];
        let uk1 = Vector::from(u.column(k + 1));
        // Stage point of interval k, evaluated at (xp, u_{k+1}, t_{k+1}).
        let stage_jac = ocp.dynamics_jacobian(&data.stages[k], &uk1, times[k + 1])?;
        let (wv, b2) = stage_jac.vjp_both(&costate)?;
        {
            let mut col = grad.column_mut(k + 1);
            col.axpy(0.5 * h, &b2, 1.0);
        }
        let v = &costate + &wv * h;
        let uk = Vector::from(u.column(k));
        let node_jac = ocp.dynamics_jacobian(&data.states[k], &uk, times[k])?;
        let (a1v, b1) = node_jac.vjp_both(&v)?;
        let (gx_k, gu_k) = node_grad(k)?;
        costate += (a1v + wv) * (0.5 * h);
        costate += gx_k * w[k];
        let mut col = grad.column_mut(k);
        col.axpy(0.5 * h, &b1, 1.0);
        col.axpy(w[k], &gu_k, 1.0);
    }
    Ok(grad)
}

fn clamp_controls(u: &Matrix, lo: &Vector, hi: &Vector) -> Matrix {
    let mut out = u.clone();
    for k in 0..u.ncols() {
        for i in 0..u.nrows() {
            out[(i, k)] = out[(i, k)].clamp(lo[i], hi[i]);
        }
    }
    out
}

/// Default control initialization: box midpoint where finite, zero
/// otherwise.
fn default_controls(ocp: &dyn DetOcp, n: usize) -> Matrix {
    let lo = ocp.u_min();
    let hi = ocp.u_max();
    let mut u = Matrix::zeros(ocp.control_dim(), n);
    for i in 0..ocp.control_dim() {
        let v = if lo[i].is_finite() && hi[i].is_finite() {
            0.5 * (lo[i] + hi[i])
        } else {
            0.0f64.clamp(lo[i].min(hi[i]), hi[i].max(lo[i]))
        };
        for k in 0..n {
            u[(i, k)] = v;
        }
    }
    u
}

/// Solves the deterministic OCP with the augmented-Lagrangian
/// projected-gradient scheme.
pub fn solve_ocp(
    ocp: &dyn DetOcp,
    config: &SolverConfig,
    warm: Option<WarmStart>,
) -> Result<SolveResult> {
    if config.grid_points < 2 {
        return Err(Error::ParameterDomain("need at least 2 grid points".into()));
    }
    if config.outer_iterations == 0 || config.inner_iterations == 0 {
        return Err(Error::ParameterDomain(
            "iteration counts must be >= 1".into(),
        ));
    }
    let n = config.grid_points;
    let nh = ocp.n_path_constraints();
    let nht = ocp.n_terminal_constraints();
    let t_end = ocp.horizon();
    let times: Vec<f64> = (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect();

    let (mut u, mut lam, mut lam_t, mut rho, mut rho_t, mut prev_viol, mut prev_viol_t) = match warm
    {
        Some(ws) => (
            clamp_controls(&ws.u, ocp.u_min(), ocp.u_max()),
            ws.multipliers,
            ws.terminal_multipliers,
            ws.penalties,
            ws.terminal_penalties,
            ws.prev_violation,
            ws.prev_terminal_violation,
        ),
        None => (
            default_controls(ocp, n),
            Matrix::zeros(nh, n),
            Vector::zeros(nht),
            Vector::from_element(nh, config.rho0),
            Vector::from_element(nht, config.rho0),
            Vector::from_element(nh, f64::INFINITY),
            Vector::from_element(nht, f64::INFINITY),
        ),
    };

    let x0 = ocp.initial_state();
    let mut diagnostics = SolveDiagnostics::default();
    let mut step_size = f64::NAN;
    // A shifted warm start against fresh initial conditions can blow up the
    // trajectory; fall back to the default controls in that case.
    let mut data = match forward_pass(ocp, &u, &x0, &times, true, None) {
        Ok(d) => d,
        Err(
            Error::Integration { .. }
            | Error::IndefiniteCovariance { .. }
            | Error::Propagation { .. },
        ) => {
            u = default_controls(ocp, n);
            forward_pass(ocp, &u, &x0, &times, true, None)?
        }
        Err(e) => return Err(e),
    };

    for _outer in 0..config.outer_iterations {
        let mut j_aug = augmented_from_data(&data, &times, &lam, &lam_t, &rho, &rho_t).1;
        for _inner in 0..config.inner_iterations {
            let grad = gradient_from_data(ocp, &data, &times, &u, &lam, &lam_t, &rho, &rho_t)?;

            // Projected-gradient stationarity measure.
            let probe = clamp_controls(&(&u - &grad), ocp.u_min(), ocp.u_max());
            let pg_norm = (&probe - &u).amax();
            diagnostics.gradient_norms.push(pg_norm);
            if let Some(tol) = config.grad_tol {
                if pg_norm < tol {
                    break;
                }
            }

            // Initial step: grow the previous accepted step, or scale from
            // the gradient magnitude on the first pass.
            if !step_size.is_finite() {
                let gmax = grad.amax();
                let span = (0..ocp.control_dim())
                    .map(|i| {
                        let s = ocp.u_max()[i] - ocp.u_min()[i];
                        if s.is_finite() {
                            s
                        } else {
                            1.0
                        }
                    })
                    .fold(0.0f64, f64::max)
                    .max(1e-6);
                step_size = if gmax > 0.0 { 0.5 * span / gmax } else { 1.0 };
            } else {
                step_size *= 2.0;
            }

            let mut accepted = false;
            for _ in 0..=config.max_line_search {
                let u_trial = clamp_controls(&(&u - &grad * step_size), ocp.u_min(), ocp.u_max());
                let du = &u_trial - &u;
                if du.amax() == 0.0 {
                    // Nothing moves (e.g. gradient pushes against the box).
                    accepted = true;
                    break;
                }
                let slope: f64 = grad.dot(&du);
                match forward_pass(ocp, &u_trial, &x0, &times, true, None) {
                    Ok(trial_data) => {
                        let j_trial =
                            augmented_from_data(&trial_data, &times, &lam, &lam_t, &rho, &rho_t).1;
                        if j_trial <= j_aug + config.armijo * slope {
                            u = u_trial;
                            data = trial_data;
                            j_aug = j_trial;
                            accepted = true;
                            break;
                        }
                    }
                    Err(
                        Error::Integration { .. }
                        | Error::IndefiniteCovariance { .. }
                        | Error::Propagation { .. },
                    ) => {
                        // Step blew up the trajectory; contract and retry.
                    }
                    Err(e) => return Err(e),
                }
                step_size *= config.contraction;
            }
            diagnostics.inner_costs.push(j_aug);
            if !accepted {
                diagnostics.line_search_stalled = true;
                break;
            }
        }

        // Multiplier update on the final trajectory of this outer iteration,
        // followed by the penalty growth rule.
        for j in 0..nh {
            let mut viol = 0.0f64;
            for k in 0..n {
                let h = data.path_values[(j, k)];
                lam[(j, k)] = (lam[(j, k)] + rho[j] * h).max(0.0);
                viol = viol.max(h.max(0.0));
            }
            if viol > 0.0 && viol > 0.9 * prev_viol[j] {
                rho[j] *= config.gamma;
            }
            prev_viol[j] = viol;
        }
        for j in 0..nht {
            let h = data.terminal_values[j];
            lam_t[j] = (lam_t[j] + rho_t[j] * h).max(0.0);
            let viol = h.max(0.0);
            if viol > 0.0 && viol > 0.9 * prev_viol_t[j] {
                rho_t[j] *= config.gamma;
            }
            prev_viol_t[j] = viol;
        }
    }

    let (cost, augmented) = augmented_from_data(&data, &times, &lam, &lam_t, &rho, &rho_t);
    let mut max_path = Vector::from_element(nh, f64::NEG_INFINITY);
    for j in 0..nh {
        for k in 0..n {
            max_path[j] = max_path[j].max(data.path_values[(j, k)]);
        }
    }
    Ok(SolveResult {
        times,
        u: u.clone(),
        states: data.states,
        cost,
        augmented_cost: augmented,
        max_path_values: max_path,
        terminal_values: data.terminal_values,
        warm: WarmStart {
            u,
            multipliers: lam,
            terminal_multipliers: lam_t,
            penalties: rho,
            terminal_penalties: rho_t,
            prev_violation: prev_viol,
            prev_terminal_violation: prev_viol_t,
        },
        diagnostics,
    })
}

/// Output of one receding-horizon step.
pub struct MpcStepOutput {
    /// First control value of the planned trajectory.
    pub u0: Vector,
    /// Mean of the represented state at the horizon start.
    pub mu0: Vector,
    /// Variance diagonal of the represented state at the horizon start.
    pub var0: Vector,
    /// Tightened path-constraint values at the horizon start.
    pub htilde0: Vector,
    /// Full solve result for the step.
    pub result: SolveResult,
    /// Build warnings of the underlying reformulation.
    pub warnings: Vec<BuildWarning>,
}

/// Receding-horizon controller wrapping reformulation, solve and warm start.
///
/// One instance is a single-threaded state machine; distinct instances are
/// independent.
pub struct Controller {
    problem: crate::reformulate::StochasticProblem,
    repr: Representation,
    config: SolverConfig,
    /// Sampling interval by which the warm start is shifted each step.
    pub dt: f64,
    base_seed: u64,
    step_index: u64,
    warm: Option<WarmStart>,
}

impl Controller {
    /// Creates a controller for `problem` under the chosen representation.
    pub fn new(
        problem: crate::reformulate::StochasticProblem,
        repr: Representation,
        config: SolverConfig,
        dt: f64,
        seed: u64,
    ) -> Self {
        Self {
            problem,
            repr,
            config,
            dt,
            base_seed: seed,
            step_index: 0,
            warm: None,
        }
    }

    /// Rebuilds the deterministic problem from the current initial-state
    /// distribution, solves it with the fixed iteration budget and returns
    /// the first control value.
    pub fn step(&mut self, x0: &JointDistribution) -> Result<MpcStepOutput> {
        self.problem.x0 = x0.clone();
        let step_seed = crate::reformulate::splitmix64(self.base_seed ^ self.step_index);
        let built = build(&self.problem, &self.repr, step_seed)?;
        let result = solve_ocp(built.ocp.as_ref(), &self.config, self.warm.take())?;
        self.warm = Some(shift_warm_start(&result.warm, &result.times, self.dt));
        self.step_index += 1;
        let u0 = Vector::from(result.u.column(0));
        let (mu0, var0) = built.ocp.state_summary(&result.states[0]);
        let htilde0 = built.ocp.path_constraints(&result.states[0], &u0)?;
        Ok(MpcStepOutput {
            u0,
            mu0,
            var0,
            htilde0,
            result,
            warnings: built.warnings,
        })
    }

    /// Immutable access to the wrapped problem.
    pub fn problem(&self) -> &crate::reformulate::StochasticProblem {
        &self.problem
    }

    /// Number of completed steps.
    pub fn steps_taken(&self) -> u64 {
        self.step_index
    }
}

/// Shifts controls and multipliers by `dt` in time, holding the last value.
pub fn shift_warm_start(warm: &WarmStart, times: &[f64], dt: f64) -> WarmStart {
    let n = times.len();
    let mut u = warm.u.clone();
    let mut lam = warm.multipliers.clone();
    for k in 0..n {
        let t = times[k] + dt;
        u.column_mut(k)
            .copy_from(&interp_columns(times, &warm.u, t));
        if lam.nrows() > 0 {
            lam.column_mut(k)
                .copy_from(&interp_columns(times, &warm.multipliers, t));
        }
    }
    WarmStart {
        u,
        multipliers: lam,
        terminal_multipliers: warm.terminal_multipliers.clone(),
        penalties: warm.penalties.clone(),
        terminal_penalties: warm.terminal_penalties.clone(),
        prev_violation: warm.prev_violation.clone(),
        prev_terminal_violation: warm.prev_terminal_violation.clone(),
    }
}
