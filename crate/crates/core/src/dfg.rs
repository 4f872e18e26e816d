//! Dual fast gradient method on the dual of the condensed QP.
//!
//! Each iteration minimizes the Lagrangian exactly (closed form through the
//! cached factor of `H`), takes a projected gradient-ascent step of length
//! `1/L_d`, and mixes it with the projected, weighted sum of all past dual
//! gradients.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::qp::{positive_part_norm, DualConstants, QpInstance};

pub const DEFAULT_MAX_ITERS: usize = 50_000;

/// One row of a dual fast-gradient trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfgTraceRow {
    pub k: usize,
    /// `d(λ̂_k)`; `NaN` when not evaluated.
    pub d_lambda_hat: f64,
    /// `f₀(z_k)`
    pub primal_obj: f64,
    /// `‖[g(z_k)]₊‖₂`
    pub pos_violation_norm: f64,
    pub wall_ns: u64,
}

/// Iterate of the dual fast gradient method. After `k` calls to [`dfg_step`],
/// `z` and `grad` belong to iterate `k - 1` (the last inner minimization),
/// `lambda_hat` is `λ̂_{k-1}` and `lambda` is `λ_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DfgState {
    pub lambda: DVector<f64>,
    pub lambda_hat: DVector<f64>,
    /// `Σ_j ((j+1)/2) ∇d(λ_j)`
    pub grad_accum: DVector<f64>,
    pub k: usize,
    pub z: DVector<f64>,
    /// `∇d(λ_{k-1}) = g(z)`
    pub grad: DVector<f64>,
}

impl DfgState {
    /// Start from `λ₀`, which must be nonnegative.
    pub fn new(lambda0: DVector<f64>, n: usize) -> Self {
        assert!(
            lambda0.iter().all(|&l| l >= 0.0),
            "initial multipliers must be nonnegative"
        );
        let m = lambda0.len();
        Self {
            lambda_hat: lambda0.clone(),
            lambda: lambda0,
            grad_accum: DVector::zeros(m),
            k: 0,
            z: DVector::zeros(n),
            grad: DVector::zeros(m),
        }
    }
}

/// `z(λ) = argmin_z L(z, λ) = −H⁻¹(h x_t + Gᵀλ)`.
pub fn inner_minimize(inst: &QpInstance<'_>, lambda: &DVector<f64>) -> DVector<f64> {
    inst.lagrangian_minimizer(lambda)
}

/// `∇d(λ) = g(z(λ))`, given the inner minimizer `z`.
pub fn dual_gradient(inst: &QpInstance<'_>, z: &DVector<f64>) -> DVector<f64> {
    inst.eval_constraints(z)
}

/// One full iteration.
pub fn dfg_step(mut state: DfgState, inst: &QpInstance<'_>, consts: &DualConstants) -> DfgState {
    let z = inner_minimize(inst, &state.lambda);
    let grad = dual_gradient(inst, &z);
    advance(&mut state, z, grad, consts.l_d);
    state
}

fn advance(state: &mut DfgState, z: DVector<f64>, grad: DVector<f64>, l_d: f64) {
    let k = state.k as f64;
    let inv_l = 1.0 / l_d;
    state.lambda_hat = (&state.lambda + &grad * inv_l).map(|v| v.max(0.0));
    state.grad_accum.axpy(0.5 * (k + 1.0), &grad, 1.0);
    let w_hat = (k + 1.0) / (k + 3.0);
    let w_acc = 2.0 * inv_l / (k + 3.0);
    state.lambda = state.lambda_hat.zip_map(&state.grad_accum, |lh, acc| {
        w_hat * lh + w_acc * acc.max(0.0)
    });
    state.z = z;
    state.grad = grad;
    state.k += 1;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DfgStop {
    /// Stop at the first inner minimizer with `‖[g(z_k)]₊‖₂ ≤ eta_d`.
    Switch { eta_d: f64 },
    /// Stop when `f₀(z_k) − d(λ̂_k) ≤ eps` and `‖[g(z_k)]₊‖₂ ≤ eps`.
    Gap { eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfgOptions {
    pub stop: DfgStop,
    pub max_iters: usize,
    /// Record per-iteration rows, including `d(λ̂_k)` (one extra inner solve).
    pub trace: bool,
}

impl DfgOptions {
    pub fn switch(eta_d: f64) -> Self {
        Self {
            stop: DfgStop::Switch { eta_d },
            max_iters: DEFAULT_MAX_ITERS,
            trace: false,
        }
    }

    pub fn gap(eps: f64) -> Self {
        Self {
            stop: DfgStop::Gap { eps },
            max_iters: DEFAULT_MAX_ITERS,
            trace: false,
        }
    }

    pub fn with_trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DfgStatus {
    Stopped,
    CapExceeded,
}

#[derive(Debug, Clone)]
pub struct DfgOutcome {
    /// Inner minimizer paired with the returned multipliers.
    pub z: DVector<f64>,
    /// Projected ascent point `λ̂_k`.
    pub lambda: DVector<f64>,
    /// Index `k` of the returned iterate.
    pub k_last: usize,
    /// Inner minimizations performed.
    pub iters: usize,
    pub status: DfgStatus,
    pub violation: f64,
    pub trace: Vec<DfgTraceRow>,
}

/// Runs the method until the stopping rule fires or `max_iters` inner
/// minimizations have been performed. On cap, the best iterate seen is
/// returned (smallest violation for the switch rule, largest dual value for the
/// gap rule).
pub fn dfg_run(
    inst: &QpInstance<'_>,
    consts: &DualConstants,
    lambda0: DVector<f64>,
    opts: &DfgOptions,
) -> DfgOutcome {
    let start = Instant::now();
    let n = inst.n();
    let mut state = DfgState::new(lambda0, n);
    let z_free = inst.unconstrained_minimizer();
    let hinv_gt = inst.problem().hinv_gt();
    let cons = inst.problem().cons();

    let mut trace = Vec::new();
    let mut best: Option<(f64, DVector<f64>, DVector<f64>, usize, f64)> = None;
    let mut z = DVector::zeros(n);
    let mut grad = DVector::zeros(inst.m());

    while state.k < opts.max_iters {
        let k = state.k;
        z.copy_from(&z_free);
        z.gemv(-1.0, hinv_gt, &state.lambda, 1.0);
        grad.copy_from(inst.offset());
        grad.gemv(1.0, cons, &z, 1.0);
        let violation = positive_part_norm(&grad);
        advance(&mut state, z.clone(), grad.clone(), consts.l_d);

        let need_dual = opts.trace || matches!(opts.stop, DfgStop::Gap { .. });
        let d_hat = if need_dual {
            inst.dual_value(&state.lambda_hat)
        } else {
            f64::NAN
        };
        let obj = if need_dual {
            inst.eval_objective(&state.z)
        } else {
            f64::NAN
        };
        if opts.trace {
            trace.push(DfgTraceRow {
                k,
                d_lambda_hat: d_hat,
                primal_obj: obj,
                pos_violation_norm: violation,
                wall_ns: start.elapsed().as_nanos() as u64,
            });
        }

        let (done, score) = match opts.stop {
            DfgStop::Switch { eta_d } => (violation <= eta_d, -violation),
            DfgStop::Gap { eps } => (obj - d_hat <= eps && violation <= eps, d_hat),
        };
        if done {
            return DfgOutcome {
                z: state.z,
                lambda: state.lambda_hat,
                k_last: k,
                iters: k + 1,
                status: DfgStatus::Stopped,
                violation,
                trace,
            };
        }
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((
                score,
                state.z.clone(),
                state.lambda_hat.clone(),
                k,
                violation,
            ));
        }
    }

    let iters = state.k;
    let (z, lambda, k_last, violation) = match best {
        Some((_, z, l, k, v)) => (z, l, k, v),
        None => {
            let z = inst.lagrangian_minimizer(&state.lambda);
            let v = inst.violation(&z);
            (z, state.lambda.clone(), 0, v)
        }
    };
    DfgOutcome {
        z,
        lambda,
        k_last,
        iters,
        status: DfgStatus::CapExceeded,
        violation,
        trace,
    }
}

/// Best-so-far envelope of a sequence of dual values.
pub fn running_max(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    values
        .into_iter()
        .map(|v| {
            best = best.max(v);
            best
        })
        .collect()
}
