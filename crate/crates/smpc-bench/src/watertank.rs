//! Water tank whose outflow law is unknown to the controller and learned
//! from noisy data with Gaussian-process regression.
//!
//! States are the inflow rate `q` and the fill level `h`; the control sets
//! the rate of change of the inflow. The true outflow follows Torricelli's
//! law and only enters the simulated plant; the controller works with the
//! known part plus the GP residual.

use std::sync::Arc;
use std::time::Instant;

use smpc_core::distributions::JointDistribution;
use smpc_core::gp::{GpModel, Kernel};
use smpc_core::reformulate::{CostModel, PathConstraint, StochasticProblem, SystemModel};
use smpc_core::solver::{Controller, SolverConfig};
use smpc_core::{Matrix, Vector};

use crate::plant::{standard_normal, stream_rng, PlantModel, TruthPlant};
use crate::scenario::{gaussian_state, no_params, LogRow, Scenario, TimingLog, TrajectoryLog};
use crate::Result;

/// Tank cross-section in m^2.
pub const TANK_AREA: f64 = 1.0;
/// Drain cross-section in m^2.
pub const DRAIN_AREA: f64 = 1.0 / 30.0;
/// Gravity in m/s^2.
pub const GRAVITY: f64 = 9.81;
/// Maximum fill level in m.
pub const H_MAX: f64 = 1.0;
/// Chance level of the fill constraint.
pub const H_ALPHA: f64 = 0.95;

/// True outflow rate (Torricelli), negative.
pub fn outflow(h: f64) -> f64 {
    -(DRAIN_AREA / TANK_AREA) * (2.0 * GRAVITY * h.max(0.0)).sqrt()
}

/// Known part of the dynamics: the outflow is missing.
pub struct TankKnownSystem;

impl SystemModel for TankKnownSystem {
    fn nx(&self) -> usize {
        2
    }
    fn nu(&self) -> usize {
        1
    }
    fn np(&self) -> usize {
        0
    }
    fn f(&self, x: &Vector, u: &Vector, _p: &Vector, _t: f64) -> Vector {
        Vector::from_vec(vec![u[0], x[0] / TANK_AREA])
    }
    fn jac_x(&self, _x: &Vector, _u: &Vector, _p: &Vector, _t: f64) -> Matrix {
        Matrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0 / TANK_AREA, 0.0])
    }
    fn jac_u(&self, _x: &Vector, _u: &Vector, _p: &Vector, _t: f64) -> Matrix {
        Matrix::from_row_slice(2, 1, &[1.0, 0.0])
    }
    fn jac_p(&self, _x: &Vector, _u: &Vector, _p: &Vector, _t: f64) -> Matrix {
        Matrix::zeros(2, 0)
    }
}

struct TankCost;

impl CostModel for TankCost {
    fn running(&self, x: &Vector, u: &Vector, _p: &Vector) -> f64 {
        let dh = x[1] - 1.0;
        dh * dh + u[0] * u[0]
    }
    fn running_grad_x(&self, x: &Vector, _u: &Vector, _p: &Vector) -> Vector {
        Vector::from_vec(vec![0.0, 2.0 * (x[1] - 1.0)])
    }
    fn running_grad_u(&self, _x: &Vector, u: &Vector, _p: &Vector) -> Vector {
        u * 2.0
    }
    fn terminal(&self, _x: &Vector, _p: &Vector) -> f64 {
        0.0
    }
    fn terminal_grad_x(&self, _x: &Vector, _p: &Vector) -> Vector {
        Vector::zeros(2)
    }
}

/// Generates `m` noisy outflow observations on a fill-level grid and fits
/// the residual GP. The GP input is `z = [q, h, u]`; only `h` matters, so
/// the other lengthscales are effectively infinite.
pub fn train_residual_gp(m: usize, noise_var: f64, seed: u64) -> Result<Arc<GpModel>> {
    let mut rng = stream_rng(seed, 77);
    let mut inputs = Matrix::zeros(m, 3);
    let mut outputs = Matrix::zeros(m, 2);
    for j in 0..m {
        let h = if m == 1 {
            0.5
        } else {
            0.05 + 1.2 * j as f64 / (m - 1) as f64
        };
        inputs[(j, 1)] = h;
        outputs[(j, 1)] = outflow(h) + noise_var.sqrt() * standard_normal(&mut rng);
    }
    let kernels = vec![
        // Inflow channel has no residual; keep its GP numerically inert.
        Kernel::SquaredExponential {
            signal_variance: 1e-12,
            lengthscales: vec![1e6, 1e6, 1e6],
        },
        Kernel::SquaredExponential {
            signal_variance: 0.01,
            lengthscales: vec![1e6, 0.3, 1e6],
        },
    ];
    let model = GpModel::fit(kernels, inputs, outputs, vec![1e-12, noise_var])?;
    Ok(Arc::new(model))
}

/// Resolved water-tank scenario.
pub struct TankSetup {
    /// Prediction horizon in seconds.
    pub horizon: f64,
    /// Sampling interval in seconds.
    pub dt: f64,
    /// Closed-loop steps.
    pub steps: usize,
    /// GP observation noise variance.
    pub noise_var: f64,
    /// GP training points.
    pub gp_points: usize,
    /// OCP grid points.
    pub grid: usize,
}

impl TankSetup {
    /// Applies scenario overrides on top of the defaults.
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let dt = scenario.dt.unwrap_or(0.25);
        let sim = scenario.sim_duration.unwrap_or(15.0);
        Self {
            horizon: scenario.horizon.unwrap_or(1.5),
            dt,
            steps: (sim / dt).round() as usize,
            noise_var: scenario.noise_var.unwrap_or(1e-3),
            gp_points: scenario.gp_points,
            grid: scenario.grid_points.unwrap_or(12),
        }
    }
}

/// Builds the tank problem with the residual GP attached.
pub fn build_problem(
    setup: &TankSetup,
    x0: JointDistribution,
    gp: Arc<GpModel>,
) -> Result<StochasticProblem> {
    let problem = StochasticProblem {
        horizon: setup.horizon,
        system: Arc::new(TankKnownSystem),
        cost: Arc::new(TankCost),
        constraints: vec![Arc::new(PathConstraint::new(
            H_ALPHA,
            |x: &Vector, _u: &Vector| x[1] - H_MAX,
            |_x, _u| Vector::from_vec(vec![0.0, 1.0]),
            |_x, _u| Vector::zeros(1),
        ))],
        terminal_constraints: vec![],
        // The inflow-rate change must be able to close the valve again;
        // with a one-sided bound the inflow state can never come back down
        // and any finite-horizon controller eventually overflows the tank.
        u_min: Vector::from_vec(vec![-0.2]),
        u_max: Vector::from_vec(vec![0.2]),
        sigma_w: Matrix::zeros(2, 2),
        x0,
        params: no_params(),
        x0_cross: None,
        gp: None,
    };
    Ok(problem.with_gp(gp)?)
}

struct TankPlant;

impl PlantModel for TankPlant {
    fn nx(&self) -> usize {
        2
    }
    fn drift(&self, x: &Vector, u: &Vector, _t: f64) -> Vector {
        Vector::from_vec(vec![u[0], x[0] / TANK_AREA + outflow(x[1])])
    }
}

/// One closed-loop tank run.
pub struct TankRun {
    /// Controller-side trajectory log.
    pub trajectory: TrajectoryLog,
    /// Truth fill levels per step.
    pub truth_h: Vec<f64>,
    /// Per-step wall time.
    pub timing: TimingLog,
    /// Minimum margin `1 - h` over the truth trajectory.
    pub min_margin: f64,
}

/// Runs the tank closed loop for a given GP observation-noise variance and
/// training-set size.
pub fn run_case(scenario: &Scenario, noise_var: f64, gp_points: usize) -> Result<TankRun> {
    let mut setup = TankSetup::from_scenario(scenario);
    setup.noise_var = noise_var;
    setup.gp_points = gp_points;
    let gp = train_residual_gp(setup.gp_points, setup.noise_var, scenario.seed)?;
    let repr = scenario.representation()?;

    let x_init = Vector::from_vec(vec![0.0, 0.1]);
    let problem = build_problem(&setup, gaussian_state(x_init.clone(), 1e-6), gp.clone())?;
    let config = SolverConfig {
        grid_points: setup.grid,
        ..SolverConfig::default()
    };
    let mut controller = Controller::new(problem, repr, config, setup.dt, scenario.seed);
    let plant = TruthPlant::new(TankPlant, Matrix::zeros(2, 2), 20);

    let mut truth = x_init;
    let mut truth_h = vec![truth[1]];
    let mut log = TrajectoryLog::default();
    let mut timing = TimingLog {
        wall_ns: Vec::with_capacity(setup.steps),
        warmup: scenario.warmup_steps.min(setup.steps.saturating_sub(1)),
    };
    let mut rng = stream_rng(scenario.seed.wrapping_add(21), 0);
    for k in 0..setup.steps {
        let estimate = gaussian_state(truth.clone(), 1e-6);
        let start = Instant::now();
        let step = controller.step(&estimate)?;
        timing.wall_ns.push(start.elapsed().as_nanos() as u64);
        log.rows.push(LogRow {
            t: k as f64 * setup.dt,
            u: step.u0.clone(),
            mu: step.mu0.clone(),
            var: step.var0.clone(),
            htilde: step.htilde0.clone(),
        });
        truth = plant.step(
            &truth,
            |tt| step.result.control_at(tt),
            0.0,
            setup.dt,
            &mut rng,
        );
        truth_h.push(truth[1]);
    }
    let min_margin = truth_h
        .iter()
        .map(|h| H_MAX - h)
        .fold(f64::INFINITY, f64::min);
    Ok(TankRun {
        trajectory: log,
        truth_h,
        timing,
        min_margin,
    })
}

/// Water-tank benchmark output: both observation-noise cases plus the GP
/// timing sweep.
pub struct TankOutput {
    /// Closed-loop runs per observation-noise variance.
    pub cases: Vec<(f64, TankRun)>,
    /// Mean per-step seconds per GP training-set size.
    pub gp_timing: Vec<(usize, f64)>,
}

/// Runs the two documented noise cases and the GP size sweep.
pub fn run(scenario: &Scenario) -> Result<TankOutput> {
    let noise_levels = match scenario.noise_var {
        Some(v) => vec![v, 1e-9],
        None => vec![1e-3, 1e-9],
    };
    let mut cases = Vec::new();
    for &nv in &noise_levels {
        cases.push((nv, run_case(scenario, nv, scenario.gp_points)?));
    }
    // Timing sweep on a short run: warm-up plus a few measured steps.
    let mut sweep_scenario = scenario.clone();
    let dt = scenario.dt.unwrap_or(0.25);
    sweep_scenario.sim_duration = Some(dt * (scenario.warmup_steps + 5) as f64);
    sweep_scenario.dt = Some(dt);
    let mut gp_timing = Vec::new();
    for &m in &scenario.gp_sweep {
        let run = run_case(&sweep_scenario, noise_levels[0], m)?;
        gp_timing.push((m, run.timing.mean_seconds()));
    }
    Ok(TankOutput { cases, gp_timing })
}
