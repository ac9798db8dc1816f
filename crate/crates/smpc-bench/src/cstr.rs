//! Continuous stirred tank reactor with three uncertain rate parameters.
//!
//! States are the normalized educt and product concentrations, the control
//! is the normalized flow rate, and time is measured in hours (the rates
//! are per hour; the CLI horizon/sampling flags are seconds).

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use smpc_core::distributions::{JointDistribution, MarginalDistribution};
use smpc_core::reformulate::{CostModel, PathConstraint, StochasticProblem, SystemModel};
use smpc_core::solver::{solve_ocp, Controller, SolverConfig};
use smpc_core::{Matrix, Vector};

use crate::plant::{standard_normal, stream_rng, PlantModel, TruthPlant};
use crate::scenario::{gaussian_state, LogRow, RolloutLog, Scenario, TimingLog, TrajectoryLog};
use crate::{BenchError, Result};

/// Seconds per hour; the reactor rates are per hour while the CLI speaks
/// seconds.
pub const SECONDS_PER_HOUR: f64 = 3600.0;
/// Product-concentration bound of the chance constraint.
pub const CB_BOUND: f64 = 0.14;
/// Chance level of the product constraint.
pub const CB_ALPHA: f64 = 0.9;

/// Reactor dynamics with parameters `p = [p1, p2, p3]`.
pub struct CstrSystem;

impl SystemModel for CstrSystem {
    fn nx(&self) -> usize {
        2
    }
    fn nu(&self) -> usize {
        1
    }
    fn np(&self) -> usize {
        3
    }
    fn f(&self, x: &Vector, u: &Vector, p: &Vector, _t: f64) -> Vector {
        Vector::from_vec(vec![
            -p[0] * x[0] - p[2] * x[0] * x[0] + (1.0 - x[0]) * u[0],
            p[0] * x[0] - p[1] * x[1] - x[1] * u[0],
        ])
    }
    fn jac_x(&self, x: &Vector, u: &Vector, p: &Vector, _t: f64) -> Matrix {
        Matrix::from_row_slice(
            2,
            2,
            &[-p[0] - 2.0 * p[2] * x[0] - u[0], 0.0, p[0], -p[1] - u[0]],
        )
    }
    fn jac_u(&self, x: &Vector, _u: &Vector, _p: &Vector, _t: f64) -> Matrix {
        Matrix::from_row_slice(2, 1, &[1.0 - x[0], -x[1]])
    }
    fn jac_p(&self, x: &Vector, _u: &Vector, _p: &Vector, _t: f64) -> Matrix {
        Matrix::from_row_slice(2, 3, &[-x[0], 0.0, -x[0] * x[0], x[0], -x[1], 0.0])
    }
    fn f_into(&self, x: &Vector, u: &Vector, p: &Vector, _t: f64, out: &mut [f64]) {
        out[0] = -p[0] * x[0] - p[2] * x[0] * x[0] + (1.0 - x[0]) * u[0];
        out[1] = p[0] * x[0] - p[1] * x[1] - x[1] * u[0];
    }
    fn jac_x_into(
        &self,
        x: &Vector,
        u: &Vector,
        p: &Vector,
        _t: f64,
        out: &mut nalgebra::DMatrixViewMut<f64>,
    ) {
        out[(0, 0)] = -p[0] - 2.0 * p[2] * x[0] - u[0];
        out[(0, 1)] = 0.0;
        out[(1, 0)] = p[0];
        out[(1, 1)] = -p[1] - u[0];
    }
    fn jac_u_into(
        &self,
        x: &Vector,
        _u: &Vector,
        _p: &Vector,
        _t: f64,
        out: &mut nalgebra::DMatrixViewMut<f64>,
    ) {
        out[(0, 0)] = 1.0 - x[0];
        out[(1, 0)] = -x[1];
    }
}

/// Quadratic setpoint-tracking cost of the reactor benchmark.
struct CstrCost {
    x_des: Vector,
    u_des: f64,
}

impl CostModel for CstrCost {
    fn running(&self, x: &Vector, u: &Vector, _p: &Vector) -> f64 {
        let dx0 = x[0] - self.x_des[0];
        let dx1 = x[1] - self.x_des[1];
        let du = u[0] - self.u_des;
        100.0 * (dx0 * dx0 + dx1 * dx1) + 0.1 * du * du
    }
    fn running_grad_x(&self, x: &Vector, _u: &Vector, _p: &Vector) -> Vector {
        Vector::from_vec(vec![
            200.0 * (x[0] - self.x_des[0]),
            200.0 * (x[1] - self.x_des[1]),
        ])
    }
    fn running_grad_u(&self, _x: &Vector, u: &Vector, _p: &Vector) -> Vector {
        Vector::from_vec(vec![0.2 * (u[0] - self.u_des)])
    }
    fn terminal(&self, _x: &Vector, _p: &Vector) -> f64 {
        0.0
    }
    fn terminal_grad_x(&self, _x: &Vector, _p: &Vector) -> Vector {
        Vector::zeros(2)
    }
}

/// Uniform parameter distribution of the reactor.
pub fn parameter_distribution() -> JointDistribution {
    JointDistribution::from_marginals(vec![
        MarginalDistribution::Uniform {
            lower: 48.0,
            upper: 52.0,
        },
        MarginalDistribution::Uniform {
            lower: 95.0,
            upper: 105.0,
        },
        MarginalDistribution::Uniform {
            lower: 95.0,
            upper: 105.0,
        },
    ])
    .expect("reactor parameter distribution")
}

/// Nominal steady state `(c_A, c_B, u)` for a target product concentration,
/// found by a damped Newton iteration on `f(x, u, mu_p) = 0`.
pub fn steady_state(cb_des: f64) -> Result<(Vector, f64)> {
    let sys = CstrSystem;
    let mu_p = parameter_distribution().mean().clone();
    let mut ca = 2.0 * cb_des + 0.15;
    let mut u = 50.0;
    let residual = |ca: f64, u: f64| {
        sys.f(
            &Vector::from_vec(vec![ca, cb_des]),
            &Vector::from_vec(vec![u]),
            &mu_p,
            0.0,
        )
    };
    let mut r = residual(ca, u);
    for _ in 0..100 {
        if r.norm() < 1e-12 {
            break;
        }
        let x = Vector::from_vec(vec![ca, cb_des]);
        let uu = Vector::from_vec(vec![u]);
        let jx = sys.jac_x(&x, &uu, &mu_p, 0.0);
        let ju = sys.jac_u(&x, &uu, &mu_p, 0.0);
        let jac = Matrix::from_row_slice(2, 2, &[jx[(0, 0)], ju[(0, 0)], jx[(1, 0)], ju[(1, 0)]]);
        let delta = jac
            .lu()
            .solve(&(-&r))
            .ok_or_else(|| BenchError::Config("singular Jacobian in steady-state solve".into()))?;
        // Damped update: halve until the residual shrinks.
        let mut step = 1.0;
        loop {
            let ca_new = ca + step * delta[0];
            let u_new = u + step * delta[1];
            let r_new = residual(ca_new, u_new);
            if r_new.norm() < r.norm() || step < 1e-6 {
                ca = ca_new;
                u = u_new;
                r = r_new;
                break;
            }
            step *= 0.5;
        }
    }
    if r.norm() > 1e-8 {
        return Err(BenchError::Config(format!(
            "steady-state solve did not converge, residual {}",
            r.norm()
        )));
    }
    Ok((Vector::from_vec(vec![ca, cb_des]), u))
}

/// Resolved reactor scenario parameters.
pub struct CstrSetup {
    /// Horizon in hours.
    pub horizon_h: f64,
    /// Sampling interval in hours.
    pub dt_h: f64,
    /// Closed-loop step count.
    pub steps: usize,
    /// Measurement noise variance.
    pub sigma_x2: f64,
    /// Nominal initial state.
    pub x0: Vector,
    /// Setpoint state.
    pub x_des: Vector,
    /// Setpoint control.
    pub u_des: f64,
    /// OCP grid points.
    pub grid: usize,
}

impl CstrSetup {
    /// Applies scenario overrides on top of the benchmark defaults.
    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let horizon_s = scenario.horizon.unwrap_or(36.0);
        let dt_s = scenario.dt.unwrap_or(1.0);
        let sim_s = scenario.sim_duration.unwrap_or(60.0);
        let (x_des, u_des) = steady_state(0.125)?;
        Ok(Self {
            horizon_h: horizon_s / SECONDS_PER_HOUR,
            dt_h: dt_s / SECONDS_PER_HOUR,
            steps: (sim_s / dt_s).round() as usize,
            sigma_x2: scenario.noise_var.unwrap_or(1e-9),
            x0: Vector::from_vec(vec![1.0, 0.0]),
            x_des,
            u_des,
            grid: scenario.grid_points.unwrap_or(20),
        })
    }
}

/// Builds the stochastic OCP of the reactor for a given state estimate.
pub fn build_problem(setup: &CstrSetup, x0: JointDistribution) -> StochasticProblem {
    StochasticProblem {
        horizon: setup.horizon_h,
        system: Arc::new(CstrSystem),
        cost: Arc::new(CstrCost {
            x_des: setup.x_des.clone(),
            u_des: setup.u_des,
        }),
        constraints: vec![Arc::new(PathConstraint::new(
            CB_ALPHA,
            |x: &Vector, _u: &Vector| x[1] - CB_BOUND,
            |_x, _u| Vector::from_vec(vec![0.0, 1.0]),
            |_x, _u| Vector::zeros(1),
        ))],
        terminal_constraints: vec![],
        u_min: Vector::from_vec(vec![10.0]),
        u_max: Vector::from_vec(vec![100.0]),
        sigma_w: Matrix::zeros(2, 2),
        x0,
        params: parameter_distribution(),
        x0_cross: None,
        gp: None,
    }
}

struct CstrPlant {
    p: Vector,
}

impl PlantModel for CstrPlant {
    fn nx(&self) -> usize {
        2
    }
    fn drift(&self, x: &Vector, u: &Vector, t: f64) -> Vector {
        CstrSystem.f(x, u, &self.p, t)
    }
}

/// Open-loop evaluation: one converged OCP solve plus seeded truth rollouts
/// under the fixed control trajectory.
pub struct CstrOpenLoop {
    /// Predicted trajectory of the controller (grid resolution).
    pub prediction: TrajectoryLog,
    /// Truth rollouts at the sampling-interval resolution.
    pub rollouts: RolloutLog,
    /// Empirical 90% quantile of the product concentration per step.
    pub q90: Vec<f64>,
    /// Peak of the 90% quantile over time.
    pub q90_peak: f64,
    /// Pointwise violation frequency of the product bound.
    pub violation_frequency: Vec<f64>,
    /// Setpoint used by the cost.
    pub x_des: Vector,
    /// Setpoint control.
    pub u_des: f64,
}

/// Runs the reactor open loop.
pub fn run_open_loop(scenario: &Scenario) -> Result<CstrOpenLoop> {
    let setup = CstrSetup::from_scenario(scenario)?;
    let x0_dist = gaussian_state(setup.x0.clone(), setup.sigma_x2);
    let problem = build_problem(&setup, x0_dist);
    let repr = scenario.representation()?;

    // Converged solve for the open-loop prediction.
    let config = SolverConfig {
        grid_points: setup.grid,
        outer_iterations: 40,
        inner_iterations: 20,
        grad_tol: Some(1e-10),
        ..SolverConfig::default()
    };
    let built = smpc_core::reformulate::build(&problem, &repr, scenario.seed)?;
    let solution = solve_ocp(built.ocp.as_ref(), &config, None)?;

    // Controller-side prediction log on the grid.
    let mut prediction = TrajectoryLog::default();
    for (k, t) in solution.times.iter().enumerate() {
        let (mu, var) = built.ocp.state_summary(&solution.states[k]);
        let uk = Vector::from(solution.u.column(k));
        let htilde = built.ocp.path_constraints(&solution.states[k], &uk)?;
        prediction.rows.push(LogRow {
            t: t * SECONDS_PER_HOUR,
            u: uk,
            mu,
            var,
            htilde,
        });
    }

    // Seeded truth rollouts under the fixed control.
    let n_roll = scenario.rollouts;
    let truth_x0 = gaussian_state(setup.x0.clone(), setup.sigma_x2);
    let joint = JointDistribution::stack(&truth_x0, &problem.params);
    let draws = joint.sample(n_roll, scenario.seed.wrapping_add(1))?;

    let log_steps = (setup.horizon_h / setup.dt_h).round() as usize;
    let times: Vec<f64> = (0..=log_steps)
        .map(|k| k as f64 * setup.dt_h * SECONDS_PER_HOUR)
        .collect();
    let states: Vec<Vec<Vector>> = (0..n_roll)
        .into_par_iter()
        .map(|r| {
            let x0 = Vector::from(draws.column(r).rows(0, 2));
            let p = Vector::from(draws.column(r).rows(2, 3));
            let plant = TruthPlant::new(CstrPlant { p }, Matrix::zeros(2, 2), 20);
            let mut rng = stream_rng(scenario.seed.wrapping_add(2), r as u64);
            let mut x = x0;
            let mut traj = Vec::with_capacity(log_steps + 1);
            traj.push(x.clone());
            for k in 0..log_steps {
                let t = k as f64 * setup.dt_h;
                x = plant.step(&x, |tt| solution.control_at(tt), t, setup.dt_h, &mut rng);
                traj.push(x.clone());
            }
            traj
        })
        .collect();
    let rollouts = RolloutLog { times, states };
    let q90 = rollouts.quantile(1, 0.9);
    let q90_peak = q90.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let violation_frequency = rollouts.violation_frequency(1, CB_BOUND);
    Ok(CstrOpenLoop {
        prediction,
        rollouts,
        q90,
        q90_peak,
        violation_frequency,
        x_des: setup.x_des,
        u_des: setup.u_des,
    })
}

/// Closed-loop evaluation of the reactor.
pub struct CstrClosedLoop {
    /// Controller-side log of the first rollout.
    pub trajectory: TrajectoryLog,
    /// Truth trajectories of all rollouts.
    pub rollouts: RolloutLog,
    /// Per-step wall time of the first rollout.
    pub timing: TimingLog,
    /// Minimum margin `0.14 - c_B` of the first rollout's truth trajectory.
    pub min_margin: f64,
}

/// Runs the reactor closed loop with `scenario.rollouts` replications.
pub fn run_closed_loop(scenario: &Scenario) -> Result<CstrClosedLoop> {
    let setup = CstrSetup::from_scenario(scenario)?;
    let repr = scenario.representation()?;
    let n_roll = scenario.rollouts;

    let outputs: Vec<Result<(TrajectoryLog, Vec<Vector>, TimingLog)>> = (0..n_roll)
        .into_par_iter()
        .map(|r| closed_loop_rollout(scenario, &setup, &repr, r as u64))
        .collect();
    let mut trajectory = TrajectoryLog::default();
    let mut states = Vec::with_capacity(n_roll);
    let mut timing = TimingLog::default();
    for (r, out) in outputs.into_iter().enumerate() {
        let (log, truth, tim) = out?;
        if r == 0 {
            trajectory = log;
            timing = tim;
        }
        states.push(truth);
    }
    let times: Vec<f64> = (0..=setup.steps)
        .map(|k| k as f64 * setup.dt_h * SECONDS_PER_HOUR)
        .collect();
    let rollouts = RolloutLog { times, states };
    let min_margin = rollouts.states[0]
        .iter()
        .map(|x| CB_BOUND - x[1])
        .fold(f64::INFINITY, f64::min);
    Ok(CstrClosedLoop {
        trajectory,
        rollouts,
        timing,
        min_margin,
    })
}

fn closed_loop_rollout(
    scenario: &Scenario,
    setup: &CstrSetup,
    repr: &smpc_core::reformulate::Representation,
    rollout: u64,
) -> Result<(TrajectoryLog, Vec<Vector>, TimingLog)> {
    // True parameters drawn once per rollout; measurement noise per step.
    let p_draw =
        parameter_distribution().sample(1 + rollout as usize, scenario.seed.wrapping_add(3))?;
    let p = Vector::from(p_draw.column(rollout as usize));
    let plant = TruthPlant::new(CstrPlant { p }, Matrix::zeros(2, 2), 20);
    let mut meas_rng = stream_rng(scenario.seed.wrapping_add(4), rollout);

    let x0_dist = gaussian_state(setup.x0.clone(), setup.sigma_x2);
    let problem = build_problem(setup, x0_dist);
    let config = SolverConfig {
        grid_points: setup.grid,
        ..SolverConfig::default()
    };
    let mut controller =
        Controller::new(problem, *repr, config, setup.dt_h, scenario.seed ^ rollout);

    let sigma = setup.sigma_x2.sqrt();
    let mut truth = setup.x0.clone();
    let mut truth_log = Vec::with_capacity(setup.steps + 1);
    truth_log.push(truth.clone());
    let mut log = TrajectoryLog::default();
    let mut timing = TimingLog {
        wall_ns: Vec::with_capacity(setup.steps),
        warmup: scenario.warmup_steps,
    };
    for k in 0..setup.steps {
        let meas = Vector::from_fn(2, |i, _| truth[i] + sigma * standard_normal(&mut meas_rng));
        let estimate = gaussian_state(meas, setup.sigma_x2);
        let start = Instant::now();
        let step = controller.step(&estimate)?;
        timing.wall_ns.push(start.elapsed().as_nanos() as u64);

        let t_s = k as f64 * setup.dt_h * SECONDS_PER_HOUR;
        log.rows.push(LogRow {
            t: t_s,
            u: step.u0.clone(),
            mu: step.mu0.clone(),
            var: step.var0.clone(),
            htilde: step.htilde0.clone(),
        });

        truth = plant.step(
            &truth,
            |tt| step.result.control_at(tt),
            0.0,
            setup.dt_h,
            &mut meas_rng,
        );
        truth_log.push(truth.clone());
    }
    Ok((log, truth_log, timing))
}
