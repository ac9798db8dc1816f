//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use smpc_core::distributions::{JointDistribution, MarginalDistribution};
use smpc_core::reformulate::{CostModel, PathConstraint, StochasticProblem, SystemModel};
use smpc_core::{Matrix, Vector};

/// Linear system `dx = (A x + B u + C p) dt`.
pub struct LinearSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl SystemModel for LinearSystem {
    fn nx(&self) -> usize {
        self.a.nrows()
    }
    fn nu(&self) -> usize {
        self.b.ncols()
    }
    fn np(&self) -> usize {
        self.c.ncols()
    }
    fn f(&self, x: &Vector, u: &Vector, p: &Vector, _t: f64) -> Vector {
        &self.a * x + &self.b * u + &self.c * p
    }
    fn jac_x(&self, _x: &Vector, _u: &Vector, _p: &Vector, _t: f64) -> Matrix {
        self.a.clone()
    }
    fn jac_u(&self, _x: &Vector, _u: &Vector, _p: &Vector, _t: f64) -> Matrix {
        self.b.clone()
    }
    fn jac_p(&self, _x: &Vector, _u: &Vector, _p: &Vector, _t: f64) -> Matrix {
        self.c.clone()
    }
}

/// Two-state reactor-style nonlinear test system with three parameters.
pub struct BilinearReactor;

impl SystemModel for BilinearReactor {
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
}

/// Quadratic tracking cost `(x - x_des)' Q (x - x_des) + (u - u_des)' R (u - u_des)`
/// with terminal weight `Qt`.
pub struct QuadCost {
    pub q: Matrix,
    pub r: Matrix,
    pub qt: Matrix,
    pub x_des: Vector,
    pub u_des: Vector,
}

impl QuadCost {
    pub fn simple(nx: usize, nu: usize) -> Self {
        Self {
            q: Matrix::identity(nx, nx),
            r: Matrix::identity(nu, nu),
            qt: Matrix::zeros(nx, nx),
            x_des: Vector::zeros(nx),
            u_des: Vector::zeros(nu),
        }
    }
}

impl CostModel for QuadCost {
    fn running(&self, x: &Vector, u: &Vector, _p: &Vector) -> f64 {
        let dx = x - &self.x_des;
        let du = u - &self.u_des;
        (dx.transpose() * &self.q * &dx)[(0, 0)] + (du.transpose() * &self.r * &du)[(0, 0)]
    }
    fn running_grad_x(&self, x: &Vector, _u: &Vector, _p: &Vector) -> Vector {
        (&self.q + self.q.transpose()) * (x - &self.x_des)
    }
    fn running_grad_u(&self, _x: &Vector, u: &Vector, _p: &Vector) -> Vector {
        (&self.r + self.r.transpose()) * (u - &self.u_des)
    }
    fn terminal(&self, x: &Vector, _p: &Vector) -> f64 {
        let dx = x - &self.x_des;
        (dx.transpose() * &self.qt * &dx)[(0, 0)]
    }
    fn terminal_grad_x(&self, x: &Vector, _p: &Vector) -> Vector {
        (&self.qt + self.qt.transpose()) * (x - &self.x_des)
    }
}

/// Reactor test problem with uniform parameters and a chance constraint on
/// the second state.
pub fn reactor_problem(x0_var: f64, bound: f64) -> StochasticProblem {
    let x0 = JointDistribution::gaussian(
        Vector::from_vec(vec![0.9, 0.05]),
        Matrix::from_diagonal(&Vector::from_element(2, x0_var)),
    )
    .unwrap();
    let params = JointDistribution::from_marginals(vec![
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
    .unwrap();
    let mut cost = QuadCost::simple(2, 1);
    cost.q *= 100.0;
    cost.r *= 0.1;
    cost.x_des = Vector::from_vec(vec![0.4, 0.125]);
    cost.u_des = Vector::from_vec(vec![60.0]);
    StochasticProblem {
        horizon: 0.01,
        system: Arc::new(BilinearReactor),
        cost: Arc::new(cost),
        constraints: vec![Arc::new(PathConstraint::new(
            0.9,
            move |x: &Vector, _u: &Vector| x[1] - bound,
            |_x, _u| Vector::from_vec(vec![0.0, 1.0]),
            |_x, _u| Vector::zeros(1),
        ))],
        terminal_constraints: vec![],
        u_min: Vector::from_vec(vec![10.0]),
        u_max: Vector::from_vec(vec![100.0]),
        sigma_w: Matrix::zeros(2, 2),
        x0,
        params,
        x0_cross: None,
        gp: None,
    }
}

/// Deterministic variant: all variances zero.
pub fn reactor_problem_deterministic() -> StochasticProblem {
    let mut p = reactor_problem(0.0, 0.14);
    p.params = JointDistribution::from_moments(
        Vector::from_vec(vec![50.0, 100.0, 100.0]),
        Matrix::zeros(3, 3),
    )
    .unwrap();
    p
}
