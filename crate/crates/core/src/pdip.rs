//! Infeasible-start primal-dual interior-point method.
//!
//! Path following on the relaxed KKT system
//!
//! ```text
//! H z + h x + Gᵀλ = 0,   g(z) + s = 0,   Sλ = τ1,   (s, λ) > 0
//! ```
//!
//! with `τ = κμ` recomputed every iteration. The Newton system is reduced by
//! block elimination to an `n×n` SPD solve with `H + Gᵀ S⁻¹Λ G`.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::qp::{PrimalDualPoint, QpInstance};

/// Smallest step the line search will try before giving up.
pub const MIN_STEP: f64 = 1e-12;

/// Merit used by the backtracking line search in damped mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Merit {
    /// `‖r_τ(ζ + ρΔζ)‖₂ ≤ (1 − αρ)‖r_τ(ζ)‖₂`
    #[default]
    Residual,
    /// Armijo on the primal objective only: `f₀(z + ρΔz) ≤ f₀(z) + αρ∇f₀(z)ᵀΔz`.
    Objective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdipConfig {
    /// Centering factor `κ ∈ (0, 1)`; `τ = κμ`.
    pub kappa: f64,
    /// Sufficient-decrease parameter `α ∈ (0, 0.5)`.
    pub alpha: f64,
    /// Backtracking shrink factor `β ∈ (0, 1)`.
    pub beta: f64,
    /// Stop when the average duality gap `μ ≤ epsilon` (and residuals are small).
    pub epsilon: f64,
    /// Bound on `‖r_dual‖₂` and `‖r_pri‖₂` at convergence.
    pub feas_tol: f64,
    pub max_iters: usize,
    /// Fraction of the distance to the positivity boundary a step may cover.
    pub fraction_to_boundary: f64,
    pub merit: Merit,
}

impl Default for PdipConfig {
    fn default() -> Self {
        Self {
            kappa: 0.1,
            alpha: 1.0 / 3.0,
            beta: 0.5,
            epsilon: 1e-6,
            feas_tol: 1e-6,
            max_iters: 200,
            fraction_to_boundary: 0.99,
            merit: Merit::Residual,
        }
    }
}

impl PdipConfig {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let open = |v: f64, lo: f64, hi: f64| v > lo && v < hi;
        if !open(self.kappa, 0.0, 1.0) {
            return Err(format!("kappa must lie in (0,1), got {}", self.kappa));
        }
        if !open(self.alpha, 0.0, 0.5) {
            return Err(format!("alpha must lie in (0,0.5), got {}", self.alpha));
        }
        if !open(self.beta, 0.0, 1.0) {
            return Err(format!("beta must lie in (0,1), got {}", self.beta));
        }
        if !open(self.fraction_to_boundary, 0.0, 1.0) {
            return Err(format!(
                "fraction_to_boundary must lie in (0,1), got {}",
                self.fraction_to_boundary
            ));
        }
        if !(self.epsilon > 0.0) || !(self.feas_tol > 0.0) {
            return Err("epsilon and feas_tol must be positive".into());
        }
        Ok(())
    }
}

/// Blocks of the relaxed KKT residual at a point for a given `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktResidual {
    pub r_dual: DVector<f64>,
    pub r_pri: DVector<f64>,
    pub r_cent: DVector<f64>,
    pub tau: f64,
    /// `sᵀλ / m` at the point.
    pub mu: f64,
}

impl KktResidual {
    pub fn norm(&self) -> f64 {
        (self.r_dual.norm_squared() + self.r_pri.norm_squared() + self.r_cent.norm_squared()).sqrt()
    }
}

pub fn residual(inst: &QpInstance<'_>, pt: &PrimalDualPoint, tau: f64) -> KktResidual {
    let p = inst.problem();
    let mut r_dual = p.hess() * &pt.z + inst.lin();
    r_dual.gemv_tr(1.0, p.cons(), &pt.lambda, 1.0);
    let r_pri = inst.eval_constraints(&pt.z) + &pt.s;
    let r_cent = pt.s.component_mul(&pt.lambda).add_scalar(-tau);
    KktResidual {
        r_dual,
        r_pri,
        r_cent,
        tau,
        mu: pt.mu(),
    }
}

/// Newton step `(Δz, Δλ, Δs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub dz: DVector<f64>,
    pub dlambda: DVector<f64>,
    pub ds: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NewtonError {
    #[error("reduced Newton matrix H + G^T S^-1 Lambda G is not numerically positive definite")]
    Factorization,
    #[error("slack or multiplier not strictly positive")]
    NotInterior,
}

/// Solves the linearized relaxed KKT system by eliminating `Δs` and `Δλ`.
pub fn newton_direction(
    inst: &QpInstance<'_>,
    pt: &PrimalDualPoint,
    res: &KktResidual,
) -> Result<Direction, NewtonError> {
    if !pt.is_strictly_positive() {
        return Err(NewtonError::NotInterior);
    }
    let p = inst.problem();
    let g = p.cons();
    let m = inst.m();

    // w = Λ S⁻¹
    let w = pt.lambda.component_div(&pt.s);
    let mut scaled = g.clone();
    for i in 0..m {
        let sw = w[i].sqrt();
        scaled.row_mut(i).scale_mut(sw);
    }
    let mut phi = p.hess().clone();
    phi.gemm_tr(1.0, &scaled, &scaled, 1.0);
    let chol: Cholesky<f64, Dyn> = Cholesky::new(phi).ok_or(NewtonError::Factorization)?;

    // rhs = −(r_dual + Gᵀ S⁻¹(Λ r_pri − r_cent))
    let t = (pt.lambda.component_mul(&res.r_pri) - &res.r_cent).component_div(&pt.s);
    let mut rhs = res.r_dual.clone();
    rhs.gemv_tr(1.0, g, &t, 1.0);
    rhs.neg_mut();
    let dz = chol.solve(&rhs);

    let gdz = g * &dz;
    let ds = -(&res.r_pri + &gdz);
    // Δλ = S⁻¹(−r_cent − ΛΔs)
    let dlambda = (-&res.r_cent - pt.lambda.component_mul(&ds)).component_div(&pt.s);
    Ok(Direction { dz, dlambda, ds })
}

/// Largest `ρ ≥ 0` keeping `v + ρΔv ≥ 0`, or infinity when no component decreases.
pub fn max_step_to_boundary(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

/// `min(1, fraction_to_boundary · max feasible step)`.
pub fn positivity_cap(pt: &PrimalDualPoint, dir: &Direction, fraction_to_boundary: f64) -> f64 {
    let a =
        max_step_to_boundary(&pt.s, &dir.ds).min(max_step_to_boundary(&pt.lambda, &dir.dlambda));
    if a.is_infinite() {
        1.0
    } else {
        (fraction_to_boundary * a).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("line search step fell below {MIN_STEP}")]
pub struct LineSearchFailure;

/// Backtracking from the positivity cap: returns the first `ρ = ρ_max βⁱ`
/// passing the configured merit test.
pub fn backtrack(
    inst: &QpInstance<'_>,
    pt: &PrimalDualPoint,
    res: &KktResidual,
    dir: &Direction,
    cfg: &PdipConfig,
) -> Result<f64, LineSearchFailure> {
    let mut rho = positivity_cap(pt, dir, cfg.fraction_to_boundary);
    let p = inst.problem();
    match cfg.merit {
        Merit::Residual => {
            // Residual blocks are affine along the direction except r_cent.
            let mut a_dual = p.hess() * &dir.dz;
            a_dual.gemv_tr(1.0, p.cons(), &dir.dlambda, 1.0);
            let a_pri = p.cons() * &dir.dz + &dir.ds;
            let r0 = res.norm();
            loop {
                if rho < MIN_STEP {
                    return Err(LineSearchFailure);
                }
                let nd = (&res.r_dual + rho * &a_dual).norm_squared();
                let np = (&res.r_pri + rho * &a_pri).norm_squared();
                let nc: f64 = (0..pt.s.len())
                    .map(|i| {
                        let s = pt.s[i] + rho * dir.ds[i];
                        let l = pt.lambda[i] + rho * dir.dlambda[i];
                        let c = s * l - res.tau;
                        c * c
                    })
                    .sum();
                if (nd + np + nc).sqrt() <= (1.0 - cfg.alpha * rho) * r0 {
                    return Ok(rho);
                }
                rho *= cfg.beta;
            }
        }
        Merit::Objective => {
            let f0 = inst.eval_objective(&pt.z);
            let grad = p.hess() * &pt.z + inst.lin();
            let slope = grad.dot(&dir.dz);
            loop {
                if rho < MIN_STEP {
                    return Err(LineSearchFailure);
                }
                let trial = &pt.z + rho * &dir.dz;
                if inst.eval_objective(&trial) <= f0 + cfg.alpha * rho * slope {
                    return Ok(rho);
                }
                rho *= cfg.beta;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Damped,
    Pure,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Damped => "damped",
            Phase::Pure => "pure",
        }
    }
}

/// One row of an interior-point trace. Residual norms are taken at the start
/// of the iteration with the `τ` used for that iteration's Newton step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdipTraceRow {
    pub k: usize,
    pub phase: Phase,
    pub rho: f64,
    pub mu: f64,
    pub tau: f64,
    pub r_dual_norm: f64,
    pub r_pri_norm: f64,
    pub r_cent_norm: f64,
    pub obj: f64,
    /// `‖r_τ‖₂` at the updated point with the same `τ`.
    pub r_next_norm: f64,
    pub wall_ns: u64,
}

impl PdipTraceRow {
    pub fn r_norm(&self) -> f64 {
        (self.r_dual_norm.powi(2) + self.r_pri_norm.powi(2) + self.r_cent_norm.powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    Cap,
    SwitchPremature,
    LinesearchFail,
    FactorizationFail,
}

#[derive(Debug, Clone)]
pub struct PdipOutcome {
    pub point: PrimalDualPoint,
    pub termination: Termination,
    pub iters: usize,
    pub damped_iters: usize,
    pub pure_iters: usize,
    pub trace: Vec<PdipTraceRow>,
}

/// Consecutive heavily capped unit steps after which a pure-Newton run is
/// declared to have started too early.
const PREMATURE_STREAK: usize = 3;

/// Runs the path-following loop from `init`. With `pure_newton` the step is
/// the unit step reduced only by the positivity cap; otherwise it comes from
/// [`backtrack`]. Every iteration with `ρ < 1` is classified as damped.
pub fn pdip_run(
    inst: &QpInstance<'_>,
    init: PrimalDualPoint,
    cfg: &PdipConfig,
    pure_newton: bool,
) -> PdipOutcome {
    assert!(
        init.is_strictly_positive(),
        "interior-point start must have s > 0 and lambda > 0"
    );
    let start = Instant::now();
    let mut pt = init;
    let mut trace = Vec::new();
    let (mut damped, mut pure) = (0usize, 0usize);
    let mut capped_streak = 0usize;

    let finish = |pt, termination, trace: Vec<PdipTraceRow>, damped, pure| PdipOutcome {
        point: pt,
        termination,
        iters: damped + pure,
        damped_iters: damped,
        pure_iters: pure,
        trace,
    };

    for k in 0..=cfg.max_iters {
        let mu = pt.mu();
        let tau = cfg.kappa * mu;
        let res = residual(inst, &pt, tau);
        let (nd, np) = (res.r_dual.norm(), res.r_pri.norm());
        if mu <= cfg.epsilon && nd <= cfg.feas_tol && np <= cfg.feas_tol {
            return finish(pt, Termination::Converged, trace, damped, pure);
        }
        if k == cfg.max_iters {
            break;
        }
        let dir = match newton_direction(inst, &pt, &res) {
            Ok(d) => d,
            Err(_) => return finish(pt, Termination::FactorizationFail, trace, damped, pure),
        };
        let rho = if pure_newton {
            positivity_cap(&pt, &dir, cfg.fraction_to_boundary)
        } else {
            match backtrack(inst, &pt, &res, &dir, cfg) {
                Ok(r) => r,
                Err(_) => return finish(pt, Termination::LinesearchFail, trace, damped, pure),
            }
        };
        let obj = inst.eval_objective(&pt.z);
        pt.z.axpy(rho, &dir.dz, 1.0);
        pt.lambda.axpy(rho, &dir.dlambda, 1.0);
        pt.s.axpy(rho, &dir.ds, 1.0);
        debug_assert!(pt.is_strictly_positive());
        let r_next = residual(inst, &pt, tau).norm();

        let phase = if rho < 1.0 {
            Phase::Damped
        } else {
            Phase::Pure
        };
        match phase {
            Phase::Damped => damped += 1,
            Phase::Pure => pure += 1,
        }
        trace.push(PdipTraceRow {
            k,
            phase,
            rho,
            mu,
            tau,
            r_dual_norm: nd,
            r_pri_norm: np,
            r_cent_norm: res.r_cent.norm(),
            obj,
            r_next_norm: r_next,
            wall_ns: start.elapsed().as_nanos() as u64,
        });

        if pure_newton {
            capped_streak = if rho < 0.5 { capped_streak + 1 } else { 0 };
            if capped_streak >= PREMATURE_STREAK {
                return finish(pt, Termination::SwitchPremature, trace, damped, pure);
            }
        }
    }
    finish(pt, Termination::Cap, trace, damped, pure)
}

/// Slack rule `s = |g(z)|`, floored at `1e-8 · max(1, ‖g(z)‖_∞)`. Returns the
/// slacks and the number of floored components.
pub fn slack_from_constraints(gz: &DVector<f64>) -> (DVector<f64>, usize) {
    let floor = 1e-8 * gz.amax().max(1.0);
    let mut bound = 0;
    let s = gz.map(|v| {
        let a = v.abs();
        if a < floor {
            bound += 1;
            floor
        } else {
            a
        }
    });
    (s, bound)
}

/// Assembles the full `(n + 2m)` Newton matrix. Used to cross-check the
/// block elimination.
pub fn newton_matrix(inst: &QpInstance<'_>, pt: &PrimalDualPoint) -> DMatrix<f64> {
    let (n, m) = (inst.n(), inst.m());
    let p = inst.problem();
    let mut k = DMatrix::zeros(n + 2 * m, n + 2 * m);
    k.view_mut((0, 0), (n, n)).copy_from(p.hess());
    k.view_mut((0, n), (n, m)).copy_from(&p.cons().transpose());
    k.view_mut((n, 0), (m, n)).copy_from(p.cons());
    for i in 0..m {
        k[(n + i, n + m + i)] = 1.0;
        k[(n + m + i, n + i)] = pt.s[i];
        k[(n + m + i, n + m + i)] = pt.lambda[i];
    }
    k
}
