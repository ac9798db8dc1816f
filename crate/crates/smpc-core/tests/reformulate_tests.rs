//! Builder behavior: degenerate reductions, moment-dynamics oracles,
//! cross-representation agreement and gradient consistency.

mod common;

use std::sync::Arc;

use approx::assert_abs_diff_eq;
use common::{reactor_problem, reactor_problem_deterministic, LinearSystem, QuadCost};
use smpc_core::chance::ConstraintApprox;
use smpc_core::distributions::JointDistribution;
use smpc_core::gp::{GpModel, Kernel};
use smpc_core::reformulate::{
    build_mr_sampling, build_mr_taylor, build_sr, BuildWarning, ConstraintMode, DetOcp,
    Representation, StochasticProblem,
};
use smpc_core::solver::integrate_forward;
use smpc_core::transform::PropagationMethod;
use smpc_core::{Error, Matrix, Vector};

fn uniform_times(t_end: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect()
}

fn constant_controls(ocp: &dyn DetOcp, value: f64, n: usize) -> Matrix {
    Matrix::from_element(ocp.control_dim(), n, value)
}

#[test]
fn sr_point_count_matches_unscented_rule() {
    // 2 states + 3 parameters -> 11 joint points, 22 deterministic states.
    let problem = reactor_problem(1e-9, 0.14);
    let built = build_sr(
        &problem,
        &PropagationMethod::unscented(),
        ConstraintApprox::Gaussian,
        ConstraintMode::MomentTightened,
        0,
    )
    .unwrap();
    assert_eq!(built.ocp.state_dim(), 22);
}

#[test]
fn sr_rejects_wiener_gp_and_taylor() {
    let mut problem = reactor_problem(1e-9, 0.14);
    problem.sigma_w = Matrix::identity(2, 2) * 0.1;
    assert!(matches!(
        build_sr(
            &problem,
            &PropagationMethod::unscented(),
            ConstraintApprox::Gaussian,
            ConstraintMode::MomentTightened,
            0,
        ),
        Err(Error::UnsupportedWiener)
    ));

    let problem = reactor_problem(1e-9, 0.14);
    assert!(matches!(
        build_sr(
            &problem,
            &PropagationMethod::Taylor1,
            ConstraintApprox::Gaussian,
            ConstraintMode::MomentTightened,
            0,
        ),
        Err(Error::ParameterDomain(_))
    ));

    let gp = Arc::new(
        GpModel::prior(
            vec![
                Kernel::SquaredExponential {
                    signal_variance: 1.0,
                    lengthscales: vec![1.0; 3],
                },
                Kernel::SquaredExponential {
                    signal_variance: 1.0,
                    lengthscales: vec![1.0; 3],
                },
            ],
            3,
        )
        .unwrap(),
    );
    let problem = reactor_problem(1e-9, 0.14).with_gp(gp).unwrap();
    assert!(matches!(
        build_sr(
            &problem,
            &PropagationMethod::unscented(),
            ConstraintApprox::Gaussian,
            ConstraintMode::MomentTightened,
            0,
        ),
        Err(Error::UnsupportedGp)
    ));
}

#[test]
fn degenerate_distributions_reduce_to_nominal() {
    // Zero variances: all three builders must produce the nominal
    // trajectory and tightened constraints equal to the plain constraint.
    let problem = reactor_problem_deterministic();
    let n = 21;
    let times = uniform_times(problem.horizon, n);

    let nominal_traj = {
        let built = build_mr_taylor(&problem, ConstraintApprox::Gaussian).unwrap();
        let u = constant_controls(built.ocp.as_ref(), 60.0, n);
        integrate_forward(built.ocp.as_ref(), &u, &built.ocp.initial_state(), &times).unwrap()
    };

    let reprs: Vec<(&str, Box<dyn DetOcp>)> = vec![
        (
            "sr-ut",
            build_sr(
                &problem,
                &PropagationMethod::unscented(),
                ConstraintApprox::Gaussian,
                ConstraintMode::MomentTightened,
                0,
            )
            .unwrap()
            .ocp,
        ),
        (
            "mr-taylor",
            build_mr_taylor(&problem, ConstraintApprox::Gaussian)
                .unwrap()
                .ocp,
        ),
        (
            "mr-sampling",
            build_mr_sampling(
                &problem,
                &PropagationMethod::unscented(),
                ConstraintApprox::Gaussian,
            )
            .unwrap()
            .ocp,
        ),
    ];
    for (name, ocp) in reprs {
        let u = constant_controls(ocp.as_ref(), 60.0, n);
        let traj = integrate_forward(ocp.as_ref(), &u, &ocp.initial_state(), &times).unwrap();
        let uk = Vector::from_vec(vec![60.0]);
        for (k, xt) in traj.iter().enumerate() {
            let (mean, var) = ocp.state_summary(xt);
            let ref_mean = Vector::from(nominal_traj[k].rows(0, 2));
            assert_abs_diff_eq!(mean, ref_mean, epsilon = 1e-8);
            assert!(var.amax() <= 1e-12, "{name}: nonzero variance");
            let h = ocp.path_constraints(xt, &uk).unwrap();
            let expect = mean[1] - 0.14;
            assert_abs_diff_eq!(h[0], expect, epsilon = 1e-8);
        }
    }
}

#[test]
fn sr_linear_dynamics_columns() {
    // f~ columns of a linear system are A x_i + B u.
    let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.4, 0.0, -0.5]);
    let b = Matrix::from_row_slice(2, 1, &[1.0, 0.3]);
    let system = LinearSystem {
        a: a.clone(),
        b: b.clone(),
        c: Matrix::zeros(2, 0),
    };
    let problem = StochasticProblem {
        horizon: 1.0,
        system: Arc::new(system),
        cost: Arc::new(QuadCost::simple(2, 1)),
        constraints: vec![],
        terminal_constraints: vec![],
        u_min: Vector::from_element(1, -5.0),
        u_max: Vector::from_element(1, 5.0),
        sigma_w: Matrix::zeros(2, 2),
        x0: JointDistribution::gaussian(
            Vector::from_vec(vec![1.0, -1.0]),
            Matrix::identity(2, 2) * 0.2,
        )
        .unwrap(),
        params: JointDistribution::from_moments(Vector::zeros(0), Matrix::zeros(0, 0)).unwrap(),
        x0_cross: None,
        gp: None,
    };
    let built = build_sr(
        &problem,
        &PropagationMethod::unscented(),
        ConstraintApprox::Gaussian,
        ConstraintMode::MomentTightened,
        0,
    )
    .unwrap();
    let xt = built.ocp.initial_state();
    let u = Vector::from_vec(vec![0.7]);
    let f = built.ocp.dynamics(&xt, &u, 0.0).unwrap();
    let ns = built.ocp.state_dim() / 2;
    for i in 0..ns {
        let xi = Vector::from(xt.rows(i * 2, 2));
        let expect = &a * &xi + &b * &u;
        assert_abs_diff_eq!(Vector::from(f.rows(i * 2, 2)), expect, epsilon = 1e-12);
    }
}

/// Matrix exponential by scaling and squaring on a Taylor series.
fn expm(a: &Matrix, t: f64) -> Matrix {
    let n = a.nrows();
    let scaled = a * t;
    let norm = scaled.amax();
    let s = (norm.log2().ceil().max(0.0)) as i32 + 4;
    let x = &scaled / 2f64.powi(s);
    let mut term = Matrix::identity(n, n);
    let mut sum = Matrix::identity(n, n);
    for k in 1..24 {
        term = &term * &x / k as f64;
        sum += &term;
    }
    let mut result = sum;
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

#[test]
fn mr_taylor_matches_exact_linear_moments() {
    // For a linear SDE the mean/covariance ODEs are exact; compare against
    // the closed form with a matrix exponential and a fine quadrature for
    // the diffusion integral.
    let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -0.5]);
    let sigma_w = Matrix::from_row_slice(2, 2, &[0.4, 0.0, 0.1, 0.3]);
    let mu0 = Vector::from_vec(vec![1.0, -2.0]);
    let cov0 = Matrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4]);

    let system = LinearSystem {
        a: a.clone(),
        b: Matrix::zeros(2, 1),
        c: Matrix::zeros(2, 0),
    };
    let problem = StochasticProblem {
        horizon: 2.0,
        system: Arc::new(system),
        cost: Arc::new(QuadCost::simple(2, 1)),
        constraints: vec![],
        terminal_constraints: vec![],
        u_min: Vector::from_element(1, -1.0),
        u_max: Vector::from_element(1, 1.0),
        sigma_w: sigma_w.clone(),
        x0: JointDistribution::gaussian(mu0.clone(), cov0.clone()).unwrap(),
        params: JointDistribution::from_moments(Vector::zeros(0), Matrix::zeros(0, 0)).unwrap(),
        x0_cross: None,
        gp: None,
    };
    let built = build_mr_taylor(&problem, ConstraintApprox::Gaussian).unwrap();
    let n = 2001;
    let times = uniform_times(2.0, n);
    let u = Matrix::zeros(1, n);
    let traj =
        integrate_forward(built.ocp.as_ref(), &u, &built.ocp.initial_state(), &times).unwrap();
    let (mean_t, var_t) = built.ocp.state_summary(&traj[n - 1]);

    // Closed form: mu(T) = e^{AT} mu0,
    // Sigma(T) = e^{AT} Sigma0 e^{AT}' + int_0^T e^{As} Q e^{As}' ds.
    let q = &sigma_w * sigma_w.transpose();
    let phi = expm(&a, 2.0);
    let mu_exact = &phi * &mu0;
    let mut sigma_exact = &phi * &cov0 * phi.transpose();
    let m = 4000;
    let ds = 2.0 / m as f64;
    for i in 0..=m {
        let s = i as f64 * ds;
        let w = if i == 0 || i == m { 0.5 } else { 1.0 };
        let e = expm(&a, s);
        sigma_exact += &e * &q * e.transpose() * (w * ds);
    }
    assert_abs_diff_eq!(mean_t, mu_exact, epsilon = 1e-5);
    for k in 0..2 {
        assert_abs_diff_eq!(var_t[k], sigma_exact[(k, k)], epsilon = 1e-4);
    }
}

#[test]
fn scalar_ornstein_uhlenbeck_stationary_variance() {
    // dx = -x dt + dw: stationary variance 1/2.
    let system = LinearSystem {
        a: Matrix::from_element(1, 1, -1.0),
        b: Matrix::zeros(1, 1),
        c: Matrix::zeros(1, 0),
    };
    let problem = StochasticProblem {
        horizon: 10.0,
        system: Arc::new(system),
        cost: Arc::new(QuadCost::simple(1, 1)),
        constraints: vec![],
        terminal_constraints: vec![],
        u_min: Vector::from_element(1, -1.0),
        u_max: Vector::from_element(1, 1.0),
        sigma_w: Matrix::identity(1, 1),
        x0: JointDistribution::gaussian(Vector::from_vec(vec![1.0]), Matrix::zeros(1, 1)).unwrap(),
        params: JointDistribution::from_moments(Vector::zeros(0), Matrix::zeros(0, 0)).unwrap(),
        x0_cross: None,
        gp: None,
    };
    let built = build_mr_taylor(&problem, ConstraintApprox::Gaussian).unwrap();
    let n = 1000;
    let times = uniform_times(10.0, n);
    let u = Matrix::zeros(1, n);
    let traj =
        integrate_forward(built.ocp.as_ref(), &u, &built.ocp.initial_state(), &times).unwrap();
    let (_, var) = built.ocp.state_summary(&traj[n - 1]);
    assert_abs_diff_eq!(var[0], 0.5, epsilon = 1e-3);
}

#[test]
fn mr_sampling_agrees_with_mr_taylor_on_linear_systems() {
    let a = Matrix::from_row_slice(2, 2, &[-0.8, 0.2, -0.1, -0.4]);
    let b = Matrix::from_row_slice(2, 1, &[1.0, 0.5]);
    let c = Matrix::from_row_slice(2, 1, &[0.3, -0.2]);
    let system = LinearSystem { a, b, c };
    let params = JointDistribution::gaussian(
        Vector::from_vec(vec![0.5]),
        Matrix::from_element(1, 1, 0.04),
    )
    .unwrap();
    let problem = StochasticProblem {
        horizon: 1.5,
        system: Arc::new(system),
        cost: Arc::new(QuadCost::simple(2, 1)),
        constraints: vec![],
        terminal_constraints: vec![],
        u_min: Vector::from_element(1, -5.0),
        u_max: Vector::from_element(1, 5.0),
        sigma_w: Matrix::identity(2, 2) * 0.1,
        x0: JointDistribution::gaussian(
            Vector::from_vec(vec![1.0, 0.0]),
            Matrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]),
        )
        .unwrap(),
        params,
        x0_cross: None,
        gp: None,
    };
    let taylor = build_mr_taylor(&problem, ConstraintApprox::Gaussian).unwrap();
    let sampling = build_mr_sampling(
        &problem,
        &PropagationMethod::unscented(),
        ConstraintApprox::Gaussian,
    )
    .unwrap();
    let n = 61;
    let times = uniform_times(1.5, n);
    let mut u = Matrix::zeros(1, n);
    for k in 0..n {
        u[(0, k)] = 0.5 * (k as f64 * 0.2).cos();
    }
    let ta =
        integrate_forward(taylor.ocp.as_ref(), &u, &taylor.ocp.initial_state(), &times).unwrap();
    let sa = integrate_forward(
        sampling.ocp.as_ref(),
        &u,
        &sampling.ocp.initial_state(),
        &times,
    )
    .unwrap();
    for k in 0..n {
        assert_abs_diff_eq!(&ta[k], &sa[k], epsilon = 1e-6);
    }
}

#[test]
fn mr_covariance_stays_symmetric() {
    let problem = reactor_problem(1e-6, 0.14);
    let built = build_mr_sampling(
        &problem,
        &PropagationMethod::unscented(),
        ConstraintApprox::Gaussian,
    )
    .unwrap();
    let n = 41;
    let times = uniform_times(problem.horizon, n);
    let u = constant_controls(built.ocp.as_ref(), 60.0, n);
    let traj =
        integrate_forward(built.ocp.as_ref(), &u, &built.ocp.initial_state(), &times).unwrap();
    for xt in &traj {
        // Sigma_x occupies entries [2, 6) of the flattened state.
        let sx = Matrix::from_column_slice(2, 2, &[xt[2], xt[3], xt[4], xt[5]]);
        assert!((sx[(0, 1)] - sx[(1, 0)]).abs() <= 1e-10);
    }
}

#[test]
fn resampled_point_count_in_dynamics() {
    use std::sync::atomic::{AtomicUsize, Ordering};
    // Count drift evaluations per dynamics call through a wrapper system.
    struct Counting {
        inner: common::BilinearReactor,
        calls: AtomicUsize,
    }
    impl smpc_core::reformulate::SystemModel for Counting {
        fn nx(&self) -> usize {
            self.inner.nx()
        }
        fn nu(&self) -> usize {
            self.inner.nu()
        }
        fn np(&self) -> usize {
            self.inner.np()
        }
        fn f(&self, x: &Vector, u: &Vector, p: &Vector, t: f64) -> Vector {
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.inner.f(x, u, p, t)
        }
        fn jac_x(&self, x: &Vector, u: &Vector, p: &Vector, t: f64) -> Matrix {
            self.inner.jac_x(x, u, p, t)
        }
        fn jac_u(&self, x: &Vector, u: &Vector, p: &Vector, t: f64) -> Matrix {
            self.inner.jac_u(x, u, p, t)
        }
        fn jac_p(&self, x: &Vector, u: &Vector, p: &Vector, t: f64) -> Matrix {
            self.inner.jac_p(x, u, p, t)
        }
    }
    let counting = Arc::new(Counting {
        inner: common::BilinearReactor,
        calls: AtomicUsize::new(0),
    });
    let mut problem = reactor_problem(1e-6, 0.14);
    problem.system = counting.clone();
    let built = build_mr_sampling(
        &problem,
        &PropagationMethod::unscented(),
        ConstraintApprox::Gaussian,
    )
    .unwrap();
    let xt = built.ocp.initial_state();
    let u = Vector::from_vec(vec![60.0]);
    counting.calls.store(0, Ordering::Relaxed);
    built.ocp.dynamics(&xt, &u, 0.0).unwrap();
    // Five joint dimensions -> 2*5+1 = 11 drift evaluations per call.
    assert_eq!(counting.calls.load(Ordering::Relaxed), 11);
}

#[test]
fn per_sample_monte_carlo_warns_on_low_confidence() {
    let problem = reactor_problem(1e-9, 0.14);
    // 30 samples fail the normal-approximation validity for alpha = 0.9.
    let built = build_sr(
        &problem,
        &PropagationMethod::MonteCarlo { np: 30, seed: 1 },
        ConstraintApprox::Gaussian,
        ConstraintMode::PerSample,
        0,
    )
    .unwrap();
    assert_eq!(built.warnings.len(), 1);
    match &built.warnings[0] {
        BuildWarning::McConfidence {
            confidence: Some(c),
            ..
        } => {
            assert!((0.9..0.99).contains(c), "confidence {c}");
        }
        w => panic!("unexpected warning {w:?}"),
    }
    // Per-sample mode: one constraint row per sample.
    assert_eq!(built.ocp.n_path_constraints(), 30);

    // Enough samples: no warning.
    let ok = build_sr(
        &problem,
        &PropagationMethod::MonteCarlo { np: 200, seed: 1 },
        ConstraintApprox::Gaussian,
        ConstraintMode::PerSample,
        0,
    )
    .unwrap();
    assert!(ok.warnings.is_empty());
}

#[test]
fn gp_prior_adds_variance_growth_only() {
    // A prior GP leaves the mean dynamics untouched and adds sigma_f^2 per
    // unit time to each state variance.
    let a = Matrix::from_row_slice(1, 1, &[-1.0]);
    let system = LinearSystem {
        a,
        b: Matrix::identity(1, 1),
        c: Matrix::zeros(1, 0),
    };
    let sigma_f2 = 0.25;
    let gp = Arc::new(
        GpModel::prior(
            vec![Kernel::SquaredExponential {
                signal_variance: sigma_f2,
                lengthscales: vec![1.0, 1.0],
            }],
            2,
        )
        .unwrap(),
    );
    let problem = StochasticProblem {
        horizon: 1.0,
        system: Arc::new(system),
        cost: Arc::new(QuadCost::simple(1, 1)),
        constraints: vec![],
        terminal_constraints: vec![],
        u_min: Vector::from_element(1, -1.0),
        u_max: Vector::from_element(1, 1.0),
        sigma_w: Matrix::zeros(1, 1),
        x0: JointDistribution::gaussian(Vector::from_vec(vec![1.0]), Matrix::zeros(1, 1)).unwrap(),
        params: JointDistribution::from_moments(Vector::zeros(0), Matrix::zeros(0, 0)).unwrap(),
        x0_cross: None,
        gp: None,
    }
    .with_gp(gp)
    .unwrap();

    let built = build_mr_taylor(&problem, ConstraintApprox::Gaussian).unwrap();
    let xt = built.ocp.initial_state();
    let u = Vector::from_vec(vec![0.3]);
    let dxt = built.ocp.dynamics(&xt, &u, 0.0).unwrap();
    // Mean channel: -x + u unchanged by the zero-mean prior.
    assert_abs_diff_eq!(dxt[0], -1.0 + 0.3, epsilon = 1e-12);
    // Variance channel gains sigma_f^2 (Sigma_x = 0 initially).
    assert_abs_diff_eq!(dxt[1], sigma_f2, epsilon = 1e-12);
}

/// Relative error helper used by the gradient-consistency suite.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-6)
}

#[test]
fn builder_gradients_match_finite_differences() {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);

    let problem = reactor_problem(1e-6, 0.14);
    let builds: Vec<(&str, Box<dyn DetOcp>)> = vec![
        (
            "sr-ut",
            build_sr(
                &problem,
                &PropagationMethod::unscented(),
                ConstraintApprox::Gaussian,
                ConstraintMode::MomentTightened,
                0,
            )
            .unwrap()
            .ocp,
        ),
        (
            "mr-taylor",
            build_mr_taylor(&problem, ConstraintApprox::Gaussian)
                .unwrap()
                .ocp,
        ),
        (
            "mr-sampling",
            build_mr_sampling(
                &problem,
                &PropagationMethod::unscented(),
                ConstraintApprox::Gaussian,
            )
            .unwrap()
            .ocp,
        ),
    ];

    for (name, ocp) in builds {
        let base = ocp.initial_state();
        let nxt = ocp.state_dim();
        let is_moment_repr = name.starts_with("mr");
        for probe in 0..20 {
            // Random probe state. Moment representations need a positive
            // definite covariance block, so those are built from a random
            // Cholesky factor instead of free perturbation.
            let xt = if is_moment_repr {
                let mu = Vector::from_vec(vec![
                    0.9 + rng.random_range(-0.1..0.1),
                    0.05 + rng.random_range(-0.02..0.02),
                ]);
                let mut l = Matrix::zeros(2, 2);
                for i in 0..2 {
                    for j in 0..=i {
                        l[(i, j)] = rng.random_range(-1.0..1.0) * 0.02;
                    }
                    l[(i, i)] += 0.05;
                }
                let sx = &l * l.transpose();
                let sxp = Matrix::from_fn(2, 3, |_, _| rng.random_range(-1e-6..1e-6));
                let mut v = Vector::zeros(nxt);
                v.rows_mut(0, 2).copy_from(&mu);
                v.rows_mut(2, 4)
                    .copy_from(&Vector::from_column_slice(sx.as_slice()));
                v.rows_mut(6, 6)
                    .copy_from(&Vector::from_column_slice(sxp.as_slice()));
                v
            } else {
                let mut v = base.clone();
                for x in v.iter_mut() {
                    *x += 0.02 * rng.random_range(-1.0..1.0) * (x.abs() + 0.01);
                }
                v
            };
            let u = Vector::from_vec(vec![rng.random_range(20.0..90.0)]);
            let lam = Vector::from_fn(nxt, |_, _| rng.random_range(-1.0..1.0));

            // Dynamics VJP against FD of lambda' f~.
            let jac = ocp.dynamics_jacobian(&xt, &u, 0.0).unwrap();
            let vjp = jac.vjp_state(&lam).unwrap();
            let scalar = |x: &Vector| ocp.dynamics(x, &u, 0.0).map(|f| f.dot(&lam));
            let mut worst: f64 = 0.0;
            for k in 0..nxt {
                let h = f64::EPSILON.sqrt() * (1.0 + xt[k].abs());
                let mut xp = xt.clone();
                xp[k] += h;
                let fp = scalar(&xp).unwrap();
                xp[k] -= 2.0 * h;
                let fm = scalar(&xp).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                if fd.abs() > 1e-7 || vjp[k].abs() > 1e-7 {
                    worst = worst.max(rel_err(vjp[k], fd));
                }
            }
            assert!(
                worst < 1e-4,
                "{name} probe {probe}: dynamics VJP error {worst}"
            );

            let vjp_u = jac.vjp_control(&lam).unwrap();
            let h = f64::EPSILON.sqrt() * (1.0 + u[0].abs());
            let mut up = u.clone();
            up[0] += h;
            let fp = ocp.dynamics(&xt, &up, 0.0).unwrap().dot(&lam);
            up[0] -= 2.0 * h;
            let fm = ocp.dynamics(&xt, &up, 0.0).unwrap().dot(&lam);
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                rel_err(vjp_u[0], fd) < 1e-4 || (vjp_u[0].abs() < 1e-7 && fd.abs() < 1e-7),
                "{name} probe {probe}: control VJP {} vs {}",
                vjp_u[0],
                fd
            );

            // Running-cost gradient.
            let (gx, gu) = ocp.running_cost_grad(&xt, &u).unwrap();
            for k in 0..nxt.min(8) {
                let h = f64::EPSILON.sqrt() * (1.0 + xt[k].abs());
                let mut xp = xt.clone();
                xp[k] += h;
                let fp = ocp.running_cost(&xp, &u).unwrap();
                xp[k] -= 2.0 * h;
                let fm = ocp.running_cost(&xp, &u).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                if fd.abs() > 1e-6 || gx[k].abs() > 1e-6 {
                    assert!(
                        rel_err(gx[k], fd) < 1e-4,
                        "{name} probe {probe}: cost grad_x[{k}] {} vs {}",
                        gx[k],
                        fd
                    );
                }
            }
            {
                let h = f64::EPSILON.sqrt() * (1.0 + u[0].abs());
                let mut up = u.clone();
                up[0] += h;
                let fp = ocp.running_cost(&xt, &up).unwrap();
                up[0] -= 2.0 * h;
                let fm = ocp.running_cost(&xt, &up).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!(rel_err(gu[0], fd) < 1e-4, "{name}: cost grad_u");
            }

            // Tightened-constraint gradients.
            let (cx, cu) = ocp.path_constraint_grads(&xt, &u).unwrap();
            for k in 0..nxt.min(8) {
                let h = f64::EPSILON.sqrt() * (1.0 + xt[k].abs());
                let mut xp = xt.clone();
                xp[k] += h;
                let fp = ocp.path_constraints(&xp, &u).unwrap()[0];
                xp[k] -= 2.0 * h;
                let fm = ocp.path_constraints(&xp, &u).unwrap()[0];
                let fd = (fp - fm) / (2.0 * h);
                if fd.abs() > 1e-6 || cx[(0, k)].abs() > 1e-6 {
                    assert!(
                        rel_err(cx[(0, k)], fd) < 1e-4,
                        "{name} probe {probe}: constraint grad_x[{k}] {} vs {}",
                        cx[(0, k)],
                        fd
                    );
                }
            }
            let _ = cu;
        }
    }
}

#[test]
fn representation_enum_builds() {
    let problem = reactor_problem(1e-6, 0.14);
    for repr in [
        Representation::Sr {
            method: PropagationMethod::stirling1(),
            approx: ConstraintApprox::Chebyshev,
            mode: ConstraintMode::MomentTightened,
        },
        Representation::MrTaylor {
            approx: ConstraintApprox::Symmetric,
        },
        Representation::MrSampling {
            method: PropagationMethod::stirling2(),
            approx: ConstraintApprox::Gaussian,
        },
    ] {
        let built = smpc_core::reformulate::build(&problem, &repr, 7).unwrap();
        assert!(built.ocp.state_dim() > 0);
    }
}
