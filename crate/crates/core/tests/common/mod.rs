//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use hqp::{CondensedQp, PrimalDualPoint};
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn uniform_vector(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(lo..hi))
}

/// Random SPD Hessian with eigenvalues bounded below by `floor`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let m = uniform_matrix(rng, n, n, 1.0);
    let mut h = m.tr_mul(&m);
    for i in 0..n {
        h[(i, i)] += floor;
    }
    (&h + h.transpose()) * 0.5
}

/// Feasible random QP with two state components. A strictly feasible point
/// is planted, and the linear term pulls the unconstrained minimizer away from
/// it so that some constraints are active at the optimum.
pub fn random_qp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (CondensedQp, DVector<f64>) {
    let n_x = 2;
    let hess = random_spd(rng, n, 0.5);
    let cons = uniform_matrix(rng, m, n, 1.0);
    let cons_state = uniform_matrix(rng, m, n_x, 0.3);
    let lin_map = uniform_matrix(rng, n, n_x, 1.0);
    let x_t = uniform_vector(rng, n_x, -1.0, 1.0);
    let z_feas = uniform_vector(rng, n, -0.5, 0.5);
    let slack = uniform_vector(rng, m, 0.05, 1.0);
    let offset = -(&slack + &cons * &z_feas + &cons_state * &x_t);
    // Push the unconstrained minimizer out of the feasible set.
    let push = uniform_vector(rng, n, -3.0, 3.0);
    let target = &z_feas + push;
    let want_lin = -(&hess * &target);
    // Solve lin_map x_t ≈ want_lin by adjusting one column.
    let mut lin_map = lin_map;
    let other = lin_map.column(1) * x_t[1];
    if x_t[0].abs() > 1e-3 {
        lin_map.set_column(0, &((&want_lin - other) / x_t[0]));
    }
    let qp = CondensedQp::new(hess, lin_map, cons, cons_state, offset).expect("valid random QP");
    (qp, x_t)
}

/// Random dimensions with `n ≤ max_n` and `m ≤ max_m`.
pub fn random_dims(rng: &mut ChaCha8Rng, max_n: usize, max_m: usize) -> (usize, usize) {
    let n = rng.random_range(2..=max_n);
    let m = rng.random_range(1..=max_m);
    (n, m)
}

/// Strictly positive primal-dual point with log-uniform `s`, `λ`.
pub fn random_interior_point(rng: &mut ChaCha8Rng, n: usize, m: usize) -> PrimalDualPoint {
    let z = uniform_vector(rng, n, -2.0, 2.0);
    let lambda = DVector::from_fn(m, |_, _| 10f64.powf(rng.random_range(-3.0..1.0)));
    let s = DVector::from_fn(m, |_, _| 10f64.powf(rng.random_range(-3.0..1.0)));
    PrimalDualPoint::new(z, lambda, s)
}
