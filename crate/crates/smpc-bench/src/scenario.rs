//! Scenario configuration, resolution and result files.
//!
//! A [`Scenario`] mirrors the CLI flags one-to-one and can also be read from
//! a JSON config file (CLI values override file values). Result files are
//! written with 17 significant digits so that repeated runs with the same
//! scenario are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smpc_core::chance::ConstraintApprox;
use smpc_core::reformulate::{ConstraintMode, Representation};
use smpc_core::solver::SolverConfig;
use smpc_core::transform::PropagationMethod;
use smpc_core::{Matrix, Vector};

use crate::{BenchError, Result};

/// Benchmark selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    /// Continuous stirred tank reactor with uncertain parameters.
    Cstr,
    /// Scalable nonlinear chain.
    Chain,
    /// Water tank with learned outflow dynamics.
    Watertank,
    /// Inverted pendulum on a cart (simulation).
    Pendulum,
}

/// Representation selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReprKind {
    /// Sampling-based representation.
    Sr,
    /// Moment-based representation with Taylor linearization.
    MrTaylor,
    /// Moment-based representation with resampling.
    MrSampling,
}

/// Propagation method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    /// First-order Taylor linearization (moment-based only).
    Taylor,
    /// First-order Stirling interpolation.
    Stirling1,
    /// Second-order Stirling interpolation.
    Stirling2,
    /// Unscented transformation.
    Ut,
    /// Tensor Gaussian quadrature.
    Quad,
    /// Monte-Carlo sampling.
    Mc,
    /// Polynomial chaos expansion.
    Pce,
}

/// Constraint-tightening assumption selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ApproxKind {
    /// Chebyshev's inequality (any distribution).
    Chebyshev,
    /// Symmetric distributions.
    Symmetric,
    /// Gaussian assumption.
    Gaussian,
}

/// Open- or closed-loop evaluation (reactor benchmark).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Solve one OCP and roll the plant out under the fixed control.
    OpenLoop,
    /// Receding-horizon control against the noisy plant.
    ClosedLoop,
}

/// Scenario description; every field mirrors a CLI flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    /// Benchmark problem.
    pub benchmark: Benchmark,
    /// Representation of the stochastic OCP.
    pub repr: ReprKind,
    /// Uncertainty propagation method.
    pub method: MethodKind,
    /// Constraint tightening assumption.
    pub approx: ApproxKind,
    /// Open- or closed-loop evaluation.
    pub mode: RunMode,
    /// Base seed of every noise stream in the run.
    pub seed: u64,
    /// Monte-Carlo rollout count.
    pub rollouts: usize,
    /// Output directory; omitted means no files are written.
    pub out: Option<PathBuf>,
    /// Number of chain elements `n` (chain benchmark).
    pub chain_n: usize,
    /// GP training-point count (water tank benchmark).
    pub gp_points: usize,
    /// GP sweep sizes for the timing curve (water tank benchmark).
    pub gp_sweep: Vec<usize>,
    /// Benchmark-specific noise variance override (measurement noise for
    /// cstr/chain/pendulum, GP observation noise for the water tank).
    pub noise_var: Option<f64>,
    /// Closed-loop simulation duration in seconds.
    pub sim_duration: Option<f64>,
    /// Sampling interval in seconds.
    pub dt: Option<f64>,
    /// Prediction horizon in the benchmark's time unit.
    pub horizon: Option<f64>,
    /// Grid points of the OCP discretization.
    pub grid_points: Option<usize>,
    /// Monte-Carlo propagation sample count.
    pub mc_points: usize,
    /// Quadrature order `d`.
    pub quad_order: usize,
    /// PCE basis size `M`.
    pub pce_order: usize,
    /// Timing warm-up steps discarded from averages.
    pub warmup_steps: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            benchmark: Benchmark::Cstr,
            repr: ReprKind::Sr,
            method: MethodKind::Ut,
            approx: ApproxKind::Gaussian,
            mode: RunMode::OpenLoop,
            seed: 0,
            rollouts: 1000,
            out: None,
            chain_n: 2,
            gp_points: 10,
            gp_sweep: vec![1, 10, 100, 1000],
            noise_var: None,
            sim_duration: None,
            dt: None,
            horizon: None,
            grid_points: None,
            mc_points: 1000,
            quad_order: 3,
            pce_order: 2,
            warmup_steps: 5,
        }
    }
}

impl Scenario {
    /// Default scenario of a benchmark; the water tank pairs with the
    /// moment-based representation because its learned dynamics are not
    /// supported under sampling-based representation.
    pub fn default_for(benchmark: Benchmark) -> Self {
        let mut s = Scenario {
            benchmark,
            ..Scenario::default()
        };
        if benchmark == Benchmark::Watertank {
            s.repr = ReprKind::MrSampling;
        }
        s
    }

    /// Reads a scenario from a JSON config file.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Propagation method with the scenario's parameters filled in.
    pub fn propagation_method(&self) -> PropagationMethod {
        match self.method {
            MethodKind::Taylor => PropagationMethod::Taylor1,
            MethodKind::Stirling1 => PropagationMethod::stirling1(),
            MethodKind::Stirling2 => PropagationMethod::stirling2(),
            MethodKind::Ut => PropagationMethod::unscented(),
            MethodKind::Quad => PropagationMethod::GaussQuadrature {
                order: self.quad_order,
            },
            MethodKind::Mc => PropagationMethod::MonteCarlo {
                np: self.mc_points,
                seed: self.seed,
            },
            MethodKind::Pce => PropagationMethod::Pce {
                order: self.pce_order,
                quad_order: self.quad_order.max(self.pce_order),
            },
        }
    }

    /// Tightening assumption.
    pub fn constraint_approx(&self) -> ConstraintApprox {
        match self.approx {
            ApproxKind::Chebyshev => ConstraintApprox::Chebyshev,
            ApproxKind::Symmetric => ConstraintApprox::Symmetric,
            ApproxKind::Gaussian => ConstraintApprox::Gaussian,
        }
    }

    /// Full representation choice.
    pub fn representation(&self) -> Result<Representation> {
        let approx = self.constraint_approx();
        match self.repr {
            ReprKind::Sr => {
                if self.method == MethodKind::Taylor {
                    return Err(BenchError::Config(
                        "the sampling-based representation needs a point-based method \
                         (stirling1|stirling2|ut|quad|mc|pce)"
                            .into(),
                    ));
                }
                Ok(Representation::Sr {
                    method: self.propagation_method(),
                    approx,
                    mode: ConstraintMode::MomentTightened,
                })
            }
            ReprKind::MrTaylor => {
                if self.method != MethodKind::Taylor {
                    return Err(BenchError::Config(
                        "mr-taylor pairs with --method taylor".into(),
                    ));
                }
                Ok(Representation::MrTaylor { approx })
            }
            ReprKind::MrSampling => {
                if !matches!(
                    self.method,
                    MethodKind::Ut | MethodKind::Stirling1 | MethodKind::Stirling2
                ) {
                    return Err(BenchError::Config(
                        "mr-sampling supports --method ut|stirling1|stirling2".into(),
                    ));
                }
                Ok(Representation::MrSampling {
                    method: self.propagation_method(),
                    approx,
                })
            }
        }
    }

    /// Solver configuration with the scenario's grid size.
    pub fn solver_config(&self, default_grid: usize) -> SolverConfig {
        SolverConfig {
            grid_points: self.grid_points.unwrap_or(default_grid),
            ..SolverConfig::default()
        }
    }

    /// Basic validity checks shared by all benchmarks.
    pub fn validate(&self) -> Result<()> {
        if self.benchmark == Benchmark::Chain && !(2..=14).contains(&self.chain_n) {
            return Err(BenchError::Config(format!(
                "chain size must lie in [2, 14], got {}",
                self.chain_n
            )));
        }
        if let (Some(dur), Some(dt)) = (self.sim_duration, self.dt) {
            if !(dur > 0.0 && dt > 0.0) {
                return Err(BenchError::Config(
                    "sim duration and dt must be positive".into(),
                ));
            }
            let steps = dur / dt;
            if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
                return Err(BenchError::Config(format!(
                    "dt {dt} must divide the simulation duration {dur}"
                )));
            }
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0) {
                return Err(BenchError::Config("horizon must be positive".into()));
            }
        }
        if self.rollouts == 0 {
            return Err(BenchError::Config("rollouts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row of a closed-loop or open-loop trajectory log.
#[derive(Debug, Clone)]
pub struct LogRow {
    /// Time stamp.
    pub t: f64,
    /// Applied (or planned) control.
    pub u: Vector,
    /// Represented state mean.
    pub mu: Vector,
    /// Represented state variance diagonal.
    pub var: Vector,
    /// Tightened constraint values.
    pub htilde: Vector,
}

/// Trajectory log with fixed dimensions.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryLog {
    /// Ordered rows.
    pub rows: Vec<LogRow>,
}

impl TrajectoryLog {
    /// CSV with header `t,u_*,mu_x_*,var_x_*,htilde_*`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(first) = self.rows.first() {
            out.push('t');
            for i in 1..=first.u.len() {
                let _ = write!(out, ",u_{i}");
            }
            for i in 1..=first.mu.len() {
                let _ = write!(out, ",mu_x_{i}");
            }
            for i in 1..=first.var.len() {
                let _ = write!(out, ",var_x_{i}");
            }
            for i in 1..=first.htilde.len() {
                let _ = write!(out, ",htilde_{i}");
            }
            out.push('\n');
        }
        for row in &self.rows {
            out.push_str(&fmt_g17(row.t));
            for v in row
                .u
                .iter()
                .chain(row.mu.iter())
                .chain(row.var.iter())
                .chain(row.htilde.iter())
            {
                out.push(',');
                out.push_str(&fmt_g17(*v));
            }
            out.push('\n');
        }
        out
    }

    /// Minimum over rows of `bound - mu[index]`.
    pub fn min_margin(&self, index: usize, bound: f64) -> f64 {
        self.rows
            .iter()
            .map(|r| bound - r.mu[index])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Per-rollout state trajectories, `states[rollout][step]`.
#[derive(Debug, Clone, Default)]
pub struct RolloutLog {
    /// Time stamps shared by all rollouts.
    pub times: Vec<f64>,
    /// State trajectories.
    pub states: Vec<Vec<Vector>>,
}

impl RolloutLog {
    /// CSV with header `rollout,t,x_*`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let nx = self
            .states
            .first()
            .and_then(|s| s.first())
            .map_or(0, Vector::len);
        out.push_str("rollout,t");
        for i in 1..=nx {
            let _ = write!(out, ",x_{i}");
        }
        out.push('\n');
        for (r, traj) in self.states.iter().enumerate() {
            for (k, x) in traj.iter().enumerate() {
                let _ = write!(out, "{r},{}", fmt_g17(self.times[k]));
                for v in x.iter() {
                    out.push(',');
                    out.push_str(&fmt_g17(*v));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Empirical quantile of `x[index]` across rollouts at each time step.
    pub fn quantile(&self, index: usize, q: f64) -> Vec<f64> {
        let steps = self.times.len();
        let mut out = Vec::with_capacity(steps);
        for k in 0..steps {
            let mut vals: Vec<f64> = self.states.iter().map(|t| t[k][index]).collect();
            vals.sort_by(f64::total_cmp);
            let pos = q * (vals.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let w = pos - lo as f64;
            out.push(vals[lo] * (1.0 - w) + vals[hi] * w);
        }
        out
    }

    /// Fraction of rollouts with `x[index] > bound` at each time step.
    pub fn violation_frequency(&self, index: usize, bound: f64) -> Vec<f64> {
        let steps = self.times.len();
        let n = self.states.len() as f64;
        (0..steps)
            .map(|k| self.states.iter().filter(|t| t[k][index] > bound).count() as f64 / n)
            .collect()
    }
}

/// Wall-clock per MPC step.
#[derive(Debug, Clone, Default)]
pub struct TimingLog {
    /// Nanoseconds per step, in step order.
    pub wall_ns: Vec<u64>,
    /// Warm-up steps excluded from the average.
    pub warmup: usize,
}

impl TimingLog {
    /// CSV with header `step,wall_ns`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,wall_ns\n");
        for (k, ns) in self.wall_ns.iter().enumerate() {
            let _ = writeln!(out, "{k},{ns}");
        }
        out
    }

    /// Mean seconds per step after discarding warm-up steps.
    pub fn mean_seconds(&self) -> f64 {
        let tail: Vec<u64> = self.wall_ns.iter().skip(self.warmup).copied().collect();
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().sum::<u64>() as f64 / tail.len() as f64 * 1e-9
    }
}

/// Writes the standard result files into `dir`.
pub fn write_outputs(
    dir: &Path,
    meta: &serde_json::Value,
    trajectory: Option<&TrajectoryLog>,
    rollouts: Option<&RolloutLog>,
    timing: Option<&TimingLog>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(meta)?)?;
    if let Some(t) = trajectory {
        std::fs::write(dir.join("trajectory.csv"), t.to_csv())?;
    }
    if let Some(r) = rollouts {
        std::fs::write(dir.join("rollouts.csv"), r.to_csv())?;
    }
    if let Some(t) = timing {
        std::fs::write(dir.join("timing.csv"), t.to_csv())?;
    }
    Ok(())
}

/// Gaussian initial-state distribution helper used by the runners.
pub fn gaussian_state(mean: Vector, variance: f64) -> smpc_core::distributions::JointDistribution {
    let n = mean.len();
    smpc_core::distributions::JointDistribution::gaussian(mean, Matrix::identity(n, n) * variance)
        .expect("diagonal Gaussian state distribution")
}

/// Empty parameter distribution for benchmarks without uncertain parameters.
pub fn no_params() -> smpc_core::distributions::JointDistribution {
    smpc_core::distributions::JointDistribution::from_moments(Vector::zeros(0), Matrix::zeros(0, 0))
        .expect("empty distribution")
}
