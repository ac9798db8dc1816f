//! Inverted pendulum on a velocity-controlled cart (simulation).
//!
//! The cart speed tracks the commanded acceleration directly; the pendulum
//! swings with damping. Cart position and pendulum angle are measured with
//! noise, and a Kalman filter linearized at the upright equilibrium feeds
//! the controller with the estimated mean and covariance.

use std::sync::Arc;
use std::time::Instant;

use smpc_core::distributions::JointDistribution;
use smpc_core::reformulate::{CostModel, PathConstraint, StochasticProblem, SystemModel};
use smpc_core::solver::{Controller, SolverConfig};
use smpc_core::{Matrix, Vector};

use crate::kalman::KalmanFilter;
use crate::plant::{standard_normal, stream_rng, PlantModel, TruthPlant};
use crate::scenario::{LogRow, Scenario, TimingLog, TrajectoryLog};
use crate::Result;

/// Damping coefficient in N m s.
pub const DAMPING: f64 = 2.4e-3;
/// Pendulum length in m.
pub const LENGTH: f64 = 0.356;
/// Pendulum mass in kg.
pub const MASS: f64 = 0.127;
/// Pendulum moment of inertia in kg m^2.
pub const INERTIA: f64 = 1.198e-3;
/// Gravity in m/s^2.
pub const GRAVITY: f64 = 9.81;
/// Cart-position bound of the chance constraint in m.
pub const XC_BOUND: f64 = 0.65;
/// Chance level of the cart-position constraint.
pub const XC_ALPHA: f64 = 0.95;

/// Total inertia in the angular acceleration denominator.
fn j_total() -> f64 {
    0.25 * MASS * LENGTH * LENGTH + INERTIA
}

/// Pendulum dynamics; state `[x_c, v_c, alpha, omega]`.
pub struct PendulumSystem;

fn omega_dot(alpha: f64, omega: f64, u: f64) -> f64 {
    -(DAMPING * omega + 0.5 * LENGTH * (MASS * u * alpha.cos() + GRAVITY * MASS * alpha.sin()))
        / j_total()
}

impl SystemModel for PendulumSystem {
    fn nx(&self) -> usize {
        4
    }
    fn nu(&self) -> usize {
        1
    }
    fn np(&self) -> usize {
        0
    }
    fn f(&self, x: &Vector, u: &Vector, _p: &Vector, _t: f64) -> Vector {
        Vector::from_vec(vec![x[1], u[0], x[3], omega_dot(x[2], x[3], u[0])])
    }
    fn jac_x(&self, x: &Vector, u: &Vector, _p: &Vector, _t: f64) -> Matrix {
        let jt = j_total();
        let dalpha = -0.5 * LENGTH * MASS * (-u[0] * x[2].sin() + GRAVITY * x[2].cos()) / jt;
        Matrix::from_row_slice(
            4,
            4,
            &[
                0.0,
                1.0,
                0.0,
                0.0, //
                0.0,
                0.0,
                0.0,
                0.0, //
                0.0,
                0.0,
                0.0,
                1.0, //
                0.0,
                0.0,
                dalpha,
                -DAMPING / jt,
            ],
        )
    }
    fn jac_u(&self, x: &Vector, _u: &Vector, _p: &Vector, _t: f64) -> Matrix {
        Matrix::from_row_slice(
            4,
            1,
            &[0.0, 1.0, 0.0, -0.5 * LENGTH * MASS * x[2].cos() / j_total()],
        )
    }
    fn jac_p(&self, _x: &Vector, _u: &Vector, _p: &Vector, _t: f64) -> Matrix {
        Matrix::zeros(4, 0)
    }
}

struct PendulumCost {
    x_des: f64,
}

impl CostModel for PendulumCost {
    fn running(&self, x: &Vector, u: &Vector, _p: &Vector) -> f64 {
        let dx = x[0] - self.x_des;
        100.0 * dx * dx + x[1] * x[1] + x[2] * x[2] + x[3] * x[3] + 1e-9 * u[0] * u[0]
    }
    fn running_grad_x(&self, x: &Vector, _u: &Vector, _p: &Vector) -> Vector {
        Vector::from_vec(vec![
            200.0 * (x[0] - self.x_des),
            2.0 * x[1],
            2.0 * x[2],
            2.0 * x[3],
        ])
    }
    fn running_grad_u(&self, _x: &Vector, u: &Vector, _p: &Vector) -> Vector {
        u * 2e-9
    }
    fn terminal(&self, _x: &Vector, _p: &Vector) -> f64 {
        0.0
    }
    fn terminal_grad_x(&self, _x: &Vector, _p: &Vector) -> Vector {
        Vector::zeros(4)
    }
}

/// Resolved pendulum scenario.
pub struct PendulumSetup {
    /// Prediction horizon in seconds.
    pub horizon: f64,
    /// Sampling interval in seconds.
    pub dt: f64,
    /// Simulation steps.
    pub steps: usize,
    /// Measurement noise variance on cart position and angle.
    pub meas_var: f64,
    /// Cart setpoint after the change.
    pub x_des: f64,
    /// OCP grid points.
    pub grid: usize,
}

impl PendulumSetup {
    /// Applies scenario overrides on top of the defaults.
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let dt = scenario.dt.unwrap_or(1e-3);
        let sim = scenario.sim_duration.unwrap_or(2.5);
        Self {
            horizon: scenario.horizon.unwrap_or(0.7),
            dt,
            steps: (sim / dt).round() as usize,
            meas_var: scenario.noise_var.unwrap_or(1e-8),
            x_des: 0.6,
            grid: scenario.grid_points.unwrap_or(15),
        }
    }
}

/// Builds the pendulum problem for a state estimate.
pub fn build_problem(setup: &PendulumSetup, x0: JointDistribution) -> StochasticProblem {
    StochasticProblem {
        horizon: setup.horizon,
        system: Arc::new(PendulumSystem),
        cost: Arc::new(PendulumCost { x_des: setup.x_des }),
        constraints: vec![Arc::new(PathConstraint::new(
            XC_ALPHA,
            |x: &Vector, _u: &Vector| x[0] - XC_BOUND,
            |_x, _u| Vector::from_vec(vec![1.0, 0.0, 0.0, 0.0]),
            |_x, _u| Vector::zeros(1),
        ))],
        terminal_constraints: vec![],
        u_min: Vector::from_vec(vec![-5.0]),
        u_max: Vector::from_vec(vec![5.0]),
        sigma_w: Matrix::zeros(4, 4),
        x0,
        params: crate::scenario::no_params(),
        x0_cross: None,
        gp: None,
    }
}

/// Kalman filter linearized at the upright equilibrium.
pub fn equilibrium_filter(setup: &PendulumSetup) -> KalmanFilter {
    let jt = j_total();
    let a = Matrix::from_row_slice(
        4,
        4,
        &[
            0.0,
            1.0,
            0.0,
            0.0, //
            0.0,
            0.0,
            0.0,
            0.0, //
            0.0,
            0.0,
            0.0,
            1.0, //
            0.0,
            0.0,
            -0.5 * LENGTH * MASS * GRAVITY / jt,
            -DAMPING / jt,
        ],
    );
    let b = Matrix::from_row_slice(4, 1, &[0.0, 1.0, 0.0, -0.5 * LENGTH * MASS / jt]);
    let h = Matrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    KalmanFilter::from_continuous(
        &a,
        &b,
        h,
        Matrix::identity(4, 4) * 1e-9 * setup.dt,
        Vector::from_element(2, setup.meas_var),
        setup.dt,
        Vector::zeros(4),
        Matrix::identity(4, 4) * 1e-6,
    )
}

struct PendulumPlant;

impl PlantModel for PendulumPlant {
    fn nx(&self) -> usize {
        4
    }
    fn drift(&self, x: &Vector, u: &Vector, t: f64) -> Vector {
        PendulumSystem.f(x, u, &Vector::zeros(0), t)
    }
}

/// Pendulum run output.
pub struct PendulumOutput {
    /// Controller-side trajectory log.
    pub trajectory: TrajectoryLog,
    /// Truth states per step.
    pub truth: Vec<Vector>,
    /// Per-step wall time of the MPC solve.
    pub timing: TimingLog,
    /// Maximum cart position reached by the truth.
    pub max_xc: f64,
    /// Final cart position.
    pub final_xc: f64,
    /// Final pendulum angle.
    pub final_alpha: f64,
}

/// Runs the setpoint change `x_c: 0 -> 0.6 m` with Kalman-filtered state
/// feedback.
pub fn run(scenario: &Scenario) -> Result<PendulumOutput> {
    let setup = PendulumSetup::from_scenario(scenario);
    let repr = scenario.representation()?;
    let problem = build_problem(
        &setup,
        JointDistribution::from_moments(Vector::zeros(4), Matrix::identity(4, 4) * 1e-6)
            .expect("initial estimate distribution"),
    );
    let config = SolverConfig {
        grid_points: setup.grid,
        ..SolverConfig::default()
    };
    let mut controller = Controller::new(problem, repr, config, setup.dt, scenario.seed);
    let mut filter = equilibrium_filter(&setup);
    let plant = TruthPlant::new(PendulumPlant, Matrix::zeros(4, 4), 10);

    let sigma = setup.meas_var.sqrt();
    let mut rng = stream_rng(scenario.seed.wrapping_add(31), 0);
    let mut truth = Vector::zeros(4);
    let mut truth_log = vec![truth.clone()];
    let mut log = TrajectoryLog::default();
    let mut timing = TimingLog {
        wall_ns: Vec::with_capacity(setup.steps),
        warmup: scenario.warmup_steps.min(setup.steps.saturating_sub(1)),
    };
    for k in 0..setup.steps {
        // Measure, update the filter, control, apply, predict.
        let y = Vector::from_vec(vec![
            truth[0] + sigma * standard_normal(&mut rng),
            truth[2] + sigma * standard_normal(&mut rng),
        ]);
        filter.update(&y)?;
        let estimate = JointDistribution::from_moments(filter.mean.clone(), filter.cov.clone())?;
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
        truth_log.push(truth.clone());
        filter.predict(&step.u0);
    }
    let max_xc = truth_log
        .iter()
        .map(|x| x[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let last = truth_log.last().expect("nonempty log");
    Ok(PendulumOutput {
        trajectory: log,
        timing,
        max_xc,
        final_xc: last[0],
        final_alpha: last[2],
        truth: truth_log,
    })
}
