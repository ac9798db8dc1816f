//! Scalable nonlinear chain: `n+1` elements connected by springs in 3-D.
//!
//! The first element is fixed at the origin, the middle elements are point
//! masses under gravity with viscous damping, and the control is the
//! velocity of the final element, giving `Nx = 6n - 3` states. The
//! controller stabilizes the chain from noisy state measurements; the
//! benchmark exists for the computation-time scaling study, so the spring
//! constants are plain documented defaults.

use std::sync::Arc;
use std::time::Instant;

use smpc_core::distributions::JointDistribution;
use smpc_core::reformulate::{CostModel, StochasticProblem, SystemModel};
use smpc_core::solver::{Controller, SolverConfig};
use smpc_core::{Matrix, Vector};

use crate::plant::{standard_normal, stream_rng, PlantModel, TruthPlant};
use crate::scenario::{gaussian_state, no_params, LogRow, Scenario, TimingLog, TrajectoryLog};
use crate::{BenchError, Result};

/// Largest admissible propagation point count before a configuration is
/// skipped with a resource diagnostic.
pub const MAX_POINTS: usize = 1_000_000;

/// Chain physical constants (surrogate values).
#[derive(Debug, Clone, Copy)]
pub struct ChainParams {
    /// Element mass in kg.
    pub mass: f64,
    /// Spring stiffness in N/m.
    pub stiffness: f64,
    /// Spring rest length in m.
    pub rest_length: f64,
    /// Viscous damping in Ns/m.
    pub damping: f64,
    /// Gravity acceleration (z axis) in m/s^2.
    pub gravity: f64,
}

impl Default for ChainParams {
    fn default() -> Self {
        // The grid step h must keep I + h (A + A') positive definite or
        // the Euler predictor inside the Heun step drives the covariance
        // indefinite; the spring constants are chosen with that margin.
        // Damping also bounds how far the predicted covariance decays
        // over the horizon; the finite-difference adjoint needs that floor
        // to stay well above the probe step.
        Self {
            mass: 0.45,
            stiffness: 1.0,
            rest_length: 0.33,
            damping: 0.8,
            gravity: -9.81,
        }
    }
}

/// Chain dynamics with `n` elements after the fixed head.
pub struct ChainSystem {
    /// Number of chain elements `n` (the free end is element `n`).
    pub n: usize,
    /// Physical constants.
    pub params: ChainParams,
}

impl ChainSystem {
    /// State layout: positions of elements `1..n-1` (3 each), then their
    /// velocities, then the position of the free end.
    pub fn new(n: usize, params: ChainParams) -> Self {
        Self { n, params }
    }

    fn n_mid(&self) -> usize {
        self.n - 1
    }

    /// Rest state: elements on a straight horizontal line at spacing equal
    /// to the rest length, zero velocities.
    pub fn straight_state(&self) -> Vector {
        let mut x = Vector::zeros(self.nx());
        for i in 1..self.n {
            x[3 * (i - 1)] = self.params.rest_length * i as f64;
        }
        x[6 * self.n_mid()] = self.params.rest_length * self.n as f64;
        x
    }

    /// Target position of the free end.
    pub fn tail_target(&self) -> Vector {
        Vector::from_vec(vec![self.params.rest_length * self.n as f64, 0.0, 0.0])
    }
}

impl ChainSystem {
    /// Segment vector `q_i - q_{i-1}` written into a fixed array.
    #[inline]
    fn segment(&self, x: &Vector, i: usize) -> [f64; 3] {
        let nm = self.n_mid();
        let at = |j: usize, d: usize| -> f64 {
            if j == 0 {
                0.0
            } else if j == self.n {
                x[6 * nm + d]
            } else {
                x[3 * (j - 1) + d]
            }
        };
        [
            at(i, 0) - at(i - 1, 0),
            at(i, 1) - at(i - 1, 1),
            at(i, 2) - at(i - 1, 2),
        ]
    }

    #[inline]
    fn tension_into(&self, d: &[f64; 3], out: &mut [f64; 3]) {
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-9);
        let s = self.params.stiffness * (r - self.params.rest_length) / r;
        out[0] = s * d[0];
        out[1] = s * d[1];
        out[2] = s * d[2];
    }

    #[inline]
    fn tension_jac_into(&self, d: &[f64; 3], out: &mut [[f64; 3]; 3]) {
        let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let r = r2.sqrt().max(1e-9);
        let k = self.params.stiffness;
        let l = self.params.rest_length;
        let diag = k * (1.0 - l / r);
        let outer = k * l / (r * r2.max(1e-18));
        for a in 0..3 {
            for b in 0..3 {
                out[a][b] = outer * d[a] * d[b] + if a == b { diag } else { 0.0 };
            }
        }
    }
}

impl SystemModel for ChainSystem {
    fn nx(&self) -> usize {
        6 * self.n - 3
    }
    fn nu(&self) -> usize {
        3
    }
    fn np(&self) -> usize {
        0
    }
    fn f(&self, x: &Vector, u: &Vector, p: &Vector, t: f64) -> Vector {
        let mut out = Vector::zeros(self.nx());
        self.f_into(x, u, p, t, out.as_mut_slice());
        out
    }
    fn f_into(&self, x: &Vector, u: &Vector, _p: &Vector, _t: f64, out: &mut [f64]) {
        let nm = self.n_mid();
        let m = self.params.mass;
        let damp = self.params.damping / m;
        let mut t_lo = [0.0; 3];
        let mut t_hi = [0.0; 3];
        for i in 1..self.n {
            // Positions move with velocities; velocities feel both springs,
            // gravity and damping.
            let seg_lo = self.segment(x, i);
            let seg_hi = self.segment(x, i + 1);
            self.tension_into(&seg_lo, &mut t_lo);
            self.tension_into(&seg_hi, &mut t_hi);
            let prow = 3 * (i - 1);
            let vrow = 3 * nm + 3 * (i - 1);
            for d in 0..3 {
                out[prow + d] = x[vrow + d];
                out[vrow + d] = (t_hi[d] - t_lo[d]) / m - damp * x[vrow + d];
            }
            out[vrow + 2] += self.params.gravity;
        }
        // Free-end position moves with the control.
        for d in 0..3 {
            out[6 * nm + d] = u[d];
        }
    }
    fn jac_x(&self, x: &Vector, u: &Vector, p: &Vector, t: f64) -> Matrix {
        let nx = self.nx();
        let mut jac = Matrix::zeros(nx, nx);
        self.jac_x_into(x, u, p, t, &mut jac.view_mut((0, 0), (nx, nx)));
        jac
    }
    fn jac_u(&self, _x: &Vector, _u: &Vector, _p: &Vector, _t: f64) -> Matrix {
        let mut jac = Matrix::zeros(self.nx(), 3);
        jac.view_mut((6 * self.n_mid(), 0), (3, 3))
            .copy_from(&Matrix::identity(3, 3));
        jac
    }
    fn jac_p(&self, _x: &Vector, _u: &Vector, _p: &Vector, _t: f64) -> Matrix {
        Matrix::zeros(self.nx(), 0)
    }
    fn jac_x_into(
        &self,
        x: &Vector,
        _u: &Vector,
        _p: &Vector,
        _t: f64,
        jac: &mut nalgebra::DMatrixViewMut<f64>,
    ) {
        let nm = self.n_mid();
        let m = self.params.mass;
        jac.fill(0.0);
        // d(position)/d(velocity) identity blocks.
        for i in 0..3 * nm {
            jac[(i, 3 * nm + i)] = 1.0;
        }
        // Column offset of the position of element j; None for the head.
        let pos_col = |j: usize| -> Option<usize> {
            if j == 0 {
                None
            } else if j == self.n {
                Some(6 * nm)
            } else {
                Some(3 * (j - 1))
            }
        };
        let mut k_lo = [[0.0; 3]; 3];
        let mut k_hi = [[0.0; 3]; 3];
        for i in 1..self.n {
            let row = 3 * nm + 3 * (i - 1);
            let seg_lo = self.segment(x, i);
            let seg_hi = self.segment(x, i + 1);
            self.tension_jac_into(&seg_lo, &mut k_lo);
            self.tension_jac_into(&seg_hi, &mut k_hi);
            // acc_i = (T(d_{i+1}) - T(d_i)) / m, d_i = q_i - q_{i-1}.
            let col_i = pos_col(i).expect("middle element column");
            for a in 0..3 {
                for b in 0..3 {
                    jac[(row + a, col_i + b)] += (-k_hi[a][b] - k_lo[a][b]) / m;
                }
            }
            if let Some(col) = pos_col(i + 1) {
                for a in 0..3 {
                    for b in 0..3 {
                        jac[(row + a, col + b)] += k_hi[a][b] / m;
                    }
                }
            }
            if let Some(col) = pos_col(i - 1) {
                for a in 0..3 {
                    for b in 0..3 {
                        jac[(row + a, col + b)] += k_lo[a][b] / m;
                    }
                }
            }
            let damp = self.params.damping / m;
            for d in 0..3 {
                jac[(row + d, row + d)] -= damp;
            }
        }
    }
    fn jac_u_into(
        &self,
        _x: &Vector,
        _u: &Vector,
        _p: &Vector,
        _t: f64,
        jac: &mut nalgebra::DMatrixViewMut<f64>,
    ) {
        jac.fill(0.0);
        for d in 0..3 {
            jac[(6 * self.n_mid() + d, d)] = 1.0;
        }
    }
}

/// Velocity-damping and tail-tracking cost of the stabilization task.
struct ChainCost {
    n: usize,
    tail_target: Vector,
}

impl ChainCost {
    fn n_mid(&self) -> usize {
        self.n - 1
    }
}

impl CostModel for ChainCost {
    fn running(&self, x: &Vector, u: &Vector, _p: &Vector) -> f64 {
        let nm = self.n_mid();
        let mut cost = 0.0;
        for k in 0..3 * nm {
            let v = x[3 * nm + k];
            cost += v * v;
        }
        for d in 0..3 {
            let e = x[6 * nm + d] - self.tail_target[d];
            cost += 10.0 * e * e;
        }
        cost + 0.1 * u.norm_squared()
    }
    fn running_grad_x(&self, x: &Vector, _u: &Vector, _p: &Vector) -> Vector {
        let nm = self.n_mid();
        let mut g = Vector::zeros(x.len());
        for k in 0..3 * nm {
            g[3 * nm + k] = 2.0 * x[3 * nm + k];
        }
        for d in 0..3 {
            g[6 * nm + d] = 20.0 * (x[6 * nm + d] - self.tail_target[d]);
        }
        g
    }
    fn running_grad_u(&self, _x: &Vector, u: &Vector, _p: &Vector) -> Vector {
        u * 0.2
    }
    fn terminal(&self, _x: &Vector, _p: &Vector) -> f64 {
        0.0
    }
    fn terminal_grad_x(&self, x: &Vector, _p: &Vector) -> Vector {
        Vector::zeros(x.len())
    }
}

/// Resolved chain scenario.
pub struct ChainSetup {
    /// Number of chain elements.
    pub n: usize,
    /// Prediction horizon in seconds.
    pub horizon: f64,
    /// Sampling interval in seconds.
    pub dt: f64,
    /// Closed-loop steps.
    pub steps: usize,
    /// Measurement noise variance.
    pub sigma_x2: f64,
    /// OCP grid points.
    pub grid: usize,
}

impl ChainSetup {
    /// Applies scenario overrides on top of the defaults.
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let dt = scenario.dt.unwrap_or(0.05);
        let sim = scenario.sim_duration.unwrap_or(0.4);
        Self {
            n: scenario.chain_n,
            horizon: scenario.horizon.unwrap_or(0.7),
            dt,
            steps: (sim / dt).round() as usize,
            sigma_x2: scenario.noise_var.unwrap_or(1e-4),
            grid: scenario.grid_points.unwrap_or(12),
        }
    }
}

/// Builds the chain stabilization problem for a state estimate.
pub fn build_problem(setup: &ChainSetup, x0: JointDistribution) -> StochasticProblem {
    let system = ChainSystem::new(setup.n, ChainParams::default());
    let tail_target = system.tail_target();
    let n = setup.n;
    StochasticProblem {
        horizon: setup.horizon,
        system: Arc::new(system),
        cost: Arc::new(ChainCost { n, tail_target }),
        constraints: vec![],
        terminal_constraints: vec![],
        u_min: Vector::from_element(3, -1.0),
        u_max: Vector::from_element(3, 1.0),
        sigma_w: Matrix::zeros(6 * n - 3, 6 * n - 3),
        x0,
        params: no_params(),
        x0_cross: None,
        gp: None,
    }
}

struct ChainPlant {
    system: ChainSystem,
}

impl PlantModel for ChainPlant {
    fn nx(&self) -> usize {
        self.system.nx()
    }
    fn drift(&self, x: &Vector, u: &Vector, t: f64) -> Vector {
        self.system.f(x, u, &Vector::zeros(0), t)
    }
}

/// Chain run outcome: either measured timing or a resource skip.
pub enum ChainOutput {
    /// Completed run with timing and the closed-loop log.
    Completed {
        /// Controller-side trajectory log.
        trajectory: TrajectoryLog,
        /// Per-step wall time.
        timing: TimingLog,
        /// Number of states `Nx = 6n - 3`.
        nx: usize,
    },
    /// Configuration skipped because its point count exceeds the budget.
    Skipped {
        /// Human-readable reason.
        reason: String,
    },
}

/// Number of propagation points the configured method would need on the
/// chain's joint uncertainty.
pub fn point_count(scenario: &Scenario, nx: usize) -> usize {
    use crate::scenario::MethodKind;
    match scenario.method {
        MethodKind::Taylor => 1,
        MethodKind::Stirling1 | MethodKind::Stirling2 | MethodKind::Ut => 2 * nx + 1,
        MethodKind::Mc => scenario.mc_points,
        MethodKind::Quad | MethodKind::Pce => {
            let d = scenario.quad_order;
            let mut total: usize = 1;
            for _ in 0..nx {
                total = match total.checked_mul(d) {
                    Some(t) if t <= 100 * MAX_POINTS => t,
                    _ => return usize::MAX,
                };
            }
            total
        }
    }
}

/// Runs the chain stabilization MPC and reports per-step timing.
pub fn run(scenario: &Scenario) -> Result<ChainOutput> {
    let setup = ChainSetup::from_scenario(scenario);
    let nx = 6 * setup.n - 3;
    let points = point_count(scenario, nx);
    if points > MAX_POINTS {
        return Ok(ChainOutput::Skipped {
            reason: format!(
                "{:?} needs {} propagation points for {} states, above the budget of {}",
                scenario.method,
                if points == usize::MAX {
                    "more than 1e8".to_string()
                } else {
                    points.to_string()
                },
                nx,
                MAX_POINTS
            ),
        });
    }
    let repr = scenario.representation()?;
    let system = ChainSystem::new(setup.n, ChainParams::default());
    let x_init = system.straight_state();
    let plant = TruthPlant::new(
        ChainPlant {
            system: ChainSystem::new(setup.n, ChainParams::default()),
        },
        Matrix::zeros(nx, nx),
        20,
    );

    let problem = build_problem(&setup, gaussian_state(x_init.clone(), setup.sigma_x2));
    let config = SolverConfig {
        grid_points: setup.grid,
        ..SolverConfig::default()
    };
    let mut controller = Controller::new(problem, repr, config, setup.dt, scenario.seed);

    let sigma = setup.sigma_x2.sqrt();
    let mut meas_rng = stream_rng(scenario.seed.wrapping_add(11), 0);
    let mut truth = x_init;
    let mut log = TrajectoryLog::default();
    let mut timing = TimingLog {
        wall_ns: Vec::with_capacity(setup.steps),
        warmup: scenario.warmup_steps.min(setup.steps.saturating_sub(1)),
    };
    for k in 0..setup.steps {
        let meas = Vector::from_fn(nx, |i, _| truth[i] + sigma * standard_normal(&mut meas_rng));
        let estimate = gaussian_state(meas, setup.sigma_x2);
        let start = Instant::now();
        let step = controller.step(&estimate).map_err(BenchError::Solver)?;
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
            &mut meas_rng,
        );
    }
    Ok(ChainOutput::Completed {
        trajectory: log,
        timing,
        nx,
    })
}
