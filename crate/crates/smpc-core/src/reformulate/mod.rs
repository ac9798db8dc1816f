//! Deterministic reformulation of the stochastic optimal control problem.
//!
//! A [`StochasticProblem`] couples user-supplied system, cost and constraint
//! functions with distributions of the initial state and the parameters.
//! Three builders turn it into a deterministic OCP over a flattened state:
//!
//! * [`build_sr`] — sampling-based representation: the deterministic state
//!   stacks one copy of the system state per propagation point.
//! * [`build_mr_taylor`] — moment-based representation whose mean/covariance
//!   dynamics come from linearizing the system at the mean.
//! * [`build_mr_sampling`] — moment-based representation that regenerates
//!   propagation points at every evaluation of dynamics, cost or constraint.
//!
//! The resulting [`DetOcp`] exposes values and first-order sensitivities
//! (exact where the chain rule is available, central finite differences
//! where it is not) for the augmented-Lagrangian solver.

mod fd;
mod mr_sampling;
mod mr_taylor;
mod sr;

use std::sync::Arc;

use crate::chance::{mc_confidence, mc_confidence_unchecked, z_coeff, ConstraintApprox};
use crate::distributions::JointDistribution;
use crate::gp::GpModel;
use crate::transform::PropagationMethod;
use crate::{Error, Matrix, Result, Vector};

pub use mr_sampling::MrSamplingOcp;
pub use mr_taylor::MrTaylorOcp;
pub use sr::SrOcp;

/// Continuous-time system `dx = f(x, u, p, t) dt` with analytic Jacobians.
pub trait SystemModel: Send + Sync {
    /// State dimension.
    fn nx(&self) -> usize;
    /// Control dimension.
    fn nu(&self) -> usize;
    /// Parameter dimension.
    fn np(&self) -> usize;
    /// Drift `f(x, u, p, t)`.
    fn f(&self, x: &Vector, u: &Vector, p: &Vector, t: f64) -> Vector;
    /// Writes the drift into a preallocated slice; the sampling-based
    /// representation calls this once per propagation sample.
    fn f_into(&self, x: &Vector, u: &Vector, p: &Vector, t: f64, out: &mut [f64]) {
        let v = self.f(x, u, p, t);
        out.copy_from_slice(v.as_slice());
    }
    /// `df/dx`.
    fn jac_x(&self, x: &Vector, u: &Vector, p: &Vector, t: f64) -> Matrix;
    /// `df/du`.
    fn jac_u(&self, x: &Vector, u: &Vector, p: &Vector, t: f64) -> Matrix;
    /// `df/dp`.
    fn jac_p(&self, x: &Vector, u: &Vector, p: &Vector, t: f64) -> Matrix;

    /// Writes `df/dx` into a preallocated block; hot paths (one Jacobian per
    /// propagation sample) use this to avoid temporary matrices.
    fn jac_x_into(
        &self,
        x: &Vector,
        u: &Vector,
        p: &Vector,
        t: f64,
        out: &mut nalgebra::DMatrixViewMut<f64>,
    ) {
        out.copy_from(&self.jac_x(x, u, p, t));
    }

    /// Writes `df/du` into a preallocated block.
    fn jac_u_into(
        &self,
        x: &Vector,
        u: &Vector,
        p: &Vector,
        t: f64,
        out: &mut nalgebra::DMatrixViewMut<f64>,
    ) {
        out.copy_from(&self.jac_u(x, u, p, t));
    }
}

/// Integral and terminal cost with gradients.
pub trait CostModel: Send + Sync {
    /// Integral cost `l(x, u, p)`.
    fn running(&self, x: &Vector, u: &Vector, p: &Vector) -> f64;
    /// `dl/dx`.
    fn running_grad_x(&self, x: &Vector, u: &Vector, p: &Vector) -> Vector;
    /// `dl/du`.
    fn running_grad_u(&self, x: &Vector, u: &Vector, p: &Vector) -> Vector;
    /// Terminal cost `V(x, p)`.
    fn terminal(&self, x: &Vector, p: &Vector) -> f64;
    /// `dV/dx`.
    fn terminal_grad_x(&self, x: &Vector, p: &Vector) -> Vector;
}

type PathFn = dyn Fn(&Vector, &Vector) -> f64 + Send + Sync;
type PathGradFn = dyn Fn(&Vector, &Vector) -> Vector + Send + Sync;
type TermFn = dyn Fn(&Vector) -> f64 + Send + Sync;
type TermGradFn = dyn Fn(&Vector) -> Vector + Send + Sync;

/// Scalar path chance constraint `P[h(x, u) <= 0] >= alpha`.
pub struct PathConstraint {
    /// Required satisfaction probability in (0, 1).
    pub alpha: f64,
    eval: Box<PathFn>,
    grad_x: Box<PathGradFn>,
    grad_u: Box<PathGradFn>,
}

impl PathConstraint {
    /// Builds a path constraint from its value and gradient closures.
    pub fn new(
        alpha: f64,
        eval: impl Fn(&Vector, &Vector) -> f64 + Send + Sync + 'static,
        grad_x: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
        grad_u: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            alpha,
            eval: Box::new(eval),
            grad_x: Box::new(grad_x),
            grad_u: Box::new(grad_u),
        }
    }

    pub(crate) fn eval(&self, x: &Vector, u: &Vector) -> f64 {
        (self.eval)(x, u)
    }
    pub(crate) fn grad_x(&self, x: &Vector, u: &Vector) -> Vector {
        (self.grad_x)(x, u)
    }
    pub(crate) fn grad_u(&self, x: &Vector, u: &Vector) -> Vector {
        (self.grad_u)(x, u)
    }
}

/// Scalar terminal chance constraint `P[h_T(x(T)) <= 0] >= alpha`.
pub struct TerminalConstraint {
    /// Required satisfaction probability in (0, 1).
    pub alpha: f64,
    eval: Box<TermFn>,
    grad_x: Box<TermGradFn>,
}

impl TerminalConstraint {
    /// Builds a terminal constraint from its value and gradient closures.
    pub fn new(
        alpha: f64,
        eval: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
        grad_x: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            alpha,
            eval: Box::new(eval),
            grad_x: Box::new(grad_x),
        }
    }

    pub(crate) fn eval(&self, x: &Vector) -> f64 {
        (self.eval)(x)
    }
    pub(crate) fn grad_x(&self, x: &Vector) -> Vector {
        (self.grad_x)(x)
    }
}

/// Chance-constrained stochastic OCP on the horizon `[0, T]`.
pub struct StochasticProblem {
    /// Prediction horizon `T`.
    pub horizon: f64,
    /// System dynamics and Jacobians.
    pub system: Arc<dyn SystemModel>,
    /// Cost functions and gradients.
    pub cost: Arc<dyn CostModel>,
    /// Path chance constraints.
    pub constraints: Vec<Arc<PathConstraint>>,
    /// Terminal chance constraints.
    pub terminal_constraints: Vec<Arc<TerminalConstraint>>,
    /// Componentwise lower control bound.
    pub u_min: Vector,
    /// Componentwise upper control bound.
    pub u_max: Vector,
    /// Wiener diffusion `sigma_w` (Nx x Nx); zero means no diffusion.
    pub sigma_w: Matrix,
    /// Distribution of the initial state.
    pub x0: JointDistribution,
    /// Distribution of the parameters (may have dimension zero).
    pub params: JointDistribution,
    /// Initial state-parameter cross-covariance; zero when absent.
    pub x0_cross: Option<Matrix>,
    /// Learned residual dynamics, if attached.
    pub gp: Option<Arc<GpModel>>,
}

impl StochasticProblem {
    /// Checks dimensional consistency of the pieces.
    pub fn validate(&self) -> Result<()> {
        let (nx, nu, np) = (self.system.nx(), self.system.nu(), self.system.np());
        if self.x0.dim() != nx {
            return Err(Error::Dimension(format!(
                "initial-state distribution has dim {}, system nx {}",
                self.x0.dim(),
                nx
            )));
        }
        if self.params.dim() != np {
            return Err(Error::Dimension(format!(
                "parameter distribution has dim {}, system np {}",
                self.params.dim(),
                np
            )));
        }
        if self.u_min.len() != nu || self.u_max.len() != nu {
            return Err(Error::Dimension(
                "control bounds must have length nu".into(),
            ));
        }
        if self.u_min.iter().zip(self.u_max.iter()).any(|(a, b)| a > b) {
            return Err(Error::ParameterDomain(
                "u_min must be componentwise <= u_max".into(),
            ));
        }
        if self.sigma_w.nrows() != nx || self.sigma_w.ncols() != nx {
            return Err(Error::Dimension("sigma_w must be Nx x Nx".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::ParameterDomain("horizon must be > 0".into()));
        }
        for c in &self.constraints {
            if !(c.alpha > 0.0 && c.alpha < 1.0) {
                return Err(Error::ParameterDomain(
                    "constraint probability must lie in (0, 1)".into(),
                ));
            }
        }
        for c in &self.terminal_constraints {
            if !(c.alpha > 0.0 && c.alpha < 1.0) {
                return Err(Error::ParameterDomain(
                    "terminal constraint probability must lie in (0, 1)".into(),
                ));
            }
        }
        if let Some(cross) = &self.x0_cross {
            if cross.nrows() != nx || cross.ncols() != np {
                return Err(Error::Dimension(
                    "x0 cross-covariance must be Nx x Np".into(),
                ));
            }
        }
        if let Some(gp) = &self.gp {
            if gp.output_dim() != nx {
                return Err(Error::Dimension(format!(
                    "GP output dim {} must equal nx {}",
                    gp.output_dim(),
                    nx
                )));
            }
            if gp.input_dim() != nx + nu {
                return Err(Error::Dimension(format!(
                    "GP input dim {} must equal nx + nu = {}",
                    gp.input_dim(),
                    nx + nu
                )));
            }
        }
        Ok(())
    }

    /// Attaches a learned residual `d(z)`, `z = [x; u]`, to the dynamics.
    ///
    /// The drift becomes `f + mu_d(z)` and the covariance dynamics gain the
    /// GP variance evaluated at the state mean. Only the moment-based
    /// builders accept a problem with a GP.
    pub fn with_gp(mut self, gp: Arc<GpModel>) -> Result<Self> {
        self.gp = Some(gp);
        self.validate()?;
        Ok(self)
    }

    /// `Sigma_w = sigma_w sigma_w^T`.
    pub(crate) fn diffusion_cov(&self) -> Matrix {
        &self.sigma_w * self.sigma_w.transpose()
    }

    pub(crate) fn has_diffusion(&self) -> bool {
        self.sigma_w.amax() > 0.0
    }

    pub(crate) fn x0_cross_or_zero(&self) -> Matrix {
        self.x0_cross
            .clone()
            .unwrap_or_else(|| Matrix::zeros(self.system.nx(), self.system.np()))
    }
}

/// Deterministic state in either representation.
#[derive(Debug, Clone)]
pub enum DeterministicState {
    /// Sample matrix, one system-state column per propagation point.
    Samples {
        /// `Nx x Ns` sample states.
        states: Matrix,
    },
    /// Mean, covariance and state-parameter cross-covariance.
    Moments {
        /// State mean.
        mean: Vector,
        /// State covariance.
        cov: Matrix,
        /// State-parameter cross-covariance (`Nx x Np`).
        cross: Matrix,
    },
}

/// How path constraints are reformulated in the sampling-based
/// representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintMode {
    /// Mean plus `z(alpha)` standard deviations, one tightened scalar per
    /// constraint.
    MomentTightened,
    /// One deterministic copy per sample (Monte-Carlo style).
    PerSample,
}

/// Representation choice bundled with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Representation {
    /// Sampling-based representation.
    Sr {
        /// Propagation method generating the joint `(x0, p)` points.
        method: PropagationMethod,
        /// Distributional assumption for the tightening coefficient.
        approx: ConstraintApprox,
        /// Constraint reformulation mode.
        mode: ConstraintMode,
    },
    /// Moment-based representation with Taylor linearization.
    MrTaylor {
        /// Distributional assumption for the tightening coefficient.
        approx: ConstraintApprox,
    },
    /// Moment-based representation with per-evaluation resampling.
    MrSampling {
        /// Propagation method (unscented or Stirling).
        method: PropagationMethod,
        /// Distributional assumption for the tightening coefficient.
        approx: ConstraintApprox,
    },
}

/// Node-local first-order information of the deterministic dynamics.
pub trait NodeJacobian {
    /// `(df~/dx~)^T lambda`.
    fn vjp_state(&self, lambda: &Vector) -> Result<Vector>;
    /// `(df~/du)^T lambda`.
    fn vjp_control(&self, lambda: &Vector) -> Result<Vector>;
    /// Both products for the same adjoint vector; implementations that
    /// stream per-sample Jacobians override this to share one pass.
    fn vjp_both(&self, lambda: &Vector) -> Result<(Vector, Vector)> {
        Ok((self.vjp_state(lambda)?, self.vjp_control(lambda)?))
    }
}

/// Deterministic OCP over the flattened representation state.
pub trait DetOcp: Send + Sync {
    /// Flattened deterministic state dimension.
    fn state_dim(&self) -> usize;
    /// Control dimension.
    fn control_dim(&self) -> usize;
    /// Horizon `T`.
    fn horizon(&self) -> f64;
    /// Flattened initial deterministic state.
    fn initial_state(&self) -> Vector;
    /// Lower control bound.
    fn u_min(&self) -> &Vector;
    /// Upper control bound.
    fn u_max(&self) -> &Vector;
    /// Number of reformulated path constraints.
    fn n_path_constraints(&self) -> usize;
    /// Number of reformulated terminal constraints.
    fn n_terminal_constraints(&self) -> usize;

    /// Deterministic dynamics `d(x~)/dt`.
    fn dynamics(&self, xt: &Vector, u: &Vector, t: f64) -> Result<Vector>;
    /// First-order information of the dynamics at `(x~, u, t)`.
    fn dynamics_jacobian<'a>(
        &'a self,
        xt: &Vector,
        u: &Vector,
        t: f64,
    ) -> Result<Box<dyn NodeJacobian + 'a>>;
    /// Reformulated integral cost.
    fn running_cost(&self, xt: &Vector, u: &Vector) -> Result<f64>;
    /// Gradients of the integral cost with respect to `(x~, u)`.
    fn running_cost_grad(&self, xt: &Vector, u: &Vector) -> Result<(Vector, Vector)>;
    /// Reformulated terminal cost.
    fn terminal_cost(&self, xt: &Vector) -> Result<f64>;
    /// Gradient of the terminal cost.
    fn terminal_cost_grad(&self, xt: &Vector) -> Result<Vector>;
    /// Tightened path constraint values (satisfied when <= 0).
    fn path_constraints(&self, xt: &Vector, u: &Vector) -> Result<Vector>;
    /// Row-wise gradients of the tightened path constraints.
    fn path_constraint_grads(&self, xt: &Vector, u: &Vector) -> Result<(Matrix, Matrix)>;
    /// Tightened terminal constraint values.
    fn terminal_constraints(&self, xt: &Vector) -> Result<Vector>;
    /// Row-wise gradients of the tightened terminal constraints.
    fn terminal_constraint_grads(&self, xt: &Vector) -> Result<Matrix>;
    /// Mean and variance diagonal of the represented state, for logging.
    fn state_summary(&self, xt: &Vector) -> (Vector, Vector);
    /// Structured view of a flattened deterministic state.
    fn decode_state(&self, xt: &Vector) -> DeterministicState;
}

/// Non-fatal observation made while building a deterministic problem.
#[derive(Debug, Clone)]
pub enum BuildWarning {
    /// Per-sample Monte-Carlo constraints carry limited confidence.
    McConfidence {
        /// Constraint index.
        constraint: usize,
        /// Requested probability level.
        alpha: f64,
        /// Number of samples.
        ns: usize,
        /// Confidence that the chance constraint holds when all samples
        /// satisfy it (`None` when the normal approximation is invalid).
        confidence: Option<f64>,
    },
}

impl std::fmt::Display for BuildWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BuildWarning::McConfidence {
                constraint,
                alpha,
                ns,
                confidence,
            } => match confidence {
                Some(c) => write!(
                    f,
                    "per-sample constraint {constraint}: {ns} samples give confidence {c:.4} \
                     for probability level {alpha}"
                ),
                None => write!(
                    f,
                    "per-sample constraint {constraint}: {ns} samples are too few for a \
                     normal-approximation confidence at probability level {alpha}"
                ),
            },
        }
    }
}

/// A built deterministic OCP together with build-time warnings.
pub struct BuiltOcp {
    /// The deterministic problem.
    pub ocp: Box<dyn DetOcp>,
    /// Non-fatal warnings gathered during the build.
    pub warnings: Vec<BuildWarning>,
}

/// Builds the deterministic OCP for the chosen representation.
///
/// `step_seed` perturbs the Monte-Carlo sample seed so that receding-horizon
/// steps redraw their samples reproducibly.
pub fn build(
    problem: &StochasticProblem,
    repr: &Representation,
    step_seed: u64,
) -> Result<BuiltOcp> {
    match *repr {
        Representation::Sr {
            method,
            approx,
            mode,
        } => build_sr(problem, &method, approx, mode, step_seed),
        Representation::MrTaylor { approx } => build_mr_taylor(problem, approx),
        Representation::MrSampling { method, approx } => {
            build_mr_sampling(problem, &method, approx)
        }
    }
}

/// Sampling-based representation: joint `(x0, p)` points drawn once at build
/// time, per-sample dynamics, weighted costs, and tightened or per-sample
/// constraints.
pub fn build_sr(
    problem: &StochasticProblem,
    method: &PropagationMethod,
    approx: ConstraintApprox,
    mode: ConstraintMode,
    step_seed: u64,
) -> Result<BuiltOcp> {
    problem.validate()?;
    if problem.has_diffusion() {
        return Err(Error::UnsupportedWiener);
    }
    if problem.gp.is_some() {
        return Err(Error::UnsupportedGp);
    }
    if matches!(method, PropagationMethod::Taylor1) {
        return Err(Error::ParameterDomain(
            "the sampling-based representation needs a point-based method".into(),
        ));
    }
    let mut warnings = Vec::new();
    if mode == ConstraintMode::PerSample {
        if let PropagationMethod::MonteCarlo { np, .. } = method {
            // Per-sample enforcement is only as good as the sample count;
            // warn when the normal approximation behind the confidence
            // statement is outside its validity range.
            for (j, c) in problem.constraints.iter().enumerate() {
                if mc_confidence(*np, c.alpha).is_err() {
                    warnings.push(BuildWarning::McConfidence {
                        constraint: j,
                        alpha: c.alpha,
                        ns: *np,
                        confidence: Some(mc_confidence_unchecked(*np, c.alpha)),
                    });
                }
            }
        }
    }
    let ocp = SrOcp::build(problem, method, approx, mode, step_seed)?;
    Ok(BuiltOcp {
        ocp: Box::new(ocp),
        warnings,
    })
}

/// Moment-based representation with Taylor linearization of the dynamics.
pub fn build_mr_taylor(problem: &StochasticProblem, approx: ConstraintApprox) -> Result<BuiltOcp> {
    problem.validate()?;
    let ocp = MrTaylorOcp::build(problem, approx)?;
    Ok(BuiltOcp {
        ocp: Box::new(ocp),
        warnings: Vec::new(),
    })
}

/// Moment-based representation with sampling-based propagation: points are
/// regenerated from the current moments at every function evaluation.
pub fn build_mr_sampling(
    problem: &StochasticProblem,
    method: &PropagationMethod,
    approx: ConstraintApprox,
) -> Result<BuiltOcp> {
    problem.validate()?;
    if !matches!(
        method,
        PropagationMethod::Unscented { .. }
            | PropagationMethod::Stirling1 { .. }
            | PropagationMethod::Stirling2 { .. }
    ) {
        return Err(Error::ParameterDomain(
            "moment-based resampling supports the unscented and Stirling methods".into(),
        ));
    }
    let ocp = MrSamplingOcp::build(problem, method, approx)?;
    Ok(BuiltOcp {
        ocp: Box::new(ocp),
        warnings: Vec::new(),
    })
}

pub(crate) fn path_z_coeffs(
    constraints: &[Arc<PathConstraint>],
    approx: ConstraintApprox,
) -> Result<Vec<f64>> {
    constraints
        .iter()
        .map(|c| z_coeff(approx, c.alpha))
        .collect()
}

pub(crate) fn terminal_z_coeffs(
    constraints: &[Arc<TerminalConstraint>],
    approx: ConstraintApprox,
) -> Result<Vec<f64>> {
    constraints
        .iter()
        .map(|c| z_coeff(approx, c.alpha))
        .collect()
}

/// Mixes the method's own Monte-Carlo seed with the per-step seed.
pub(crate) fn reseed_method(method: &PropagationMethod, step_seed: u64) -> PropagationMethod {
    match *method {
        PropagationMethod::MonteCarlo { np, seed } => PropagationMethod::MonteCarlo {
            np,
            seed: seed ^ splitmix64(step_seed),
        },
        other => other,
    }
}

/// SplitMix64 step, used to decorrelate per-step seeds.
pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
