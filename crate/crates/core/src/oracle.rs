//! Reference solutions for verification.
//!
//! Small instances are solved by exhaustive active-set enumeration. Larger ones
//! go through a Goldfarb–Idnani dual active-set solve, are certified against
//! the KKT conditions, and are cross-checked with a tight interior-point run.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pdip::{pdip_run, PdipConfig, Termination};
use crate::qp::{PrimalDualPoint, QpInstance};

/// Enumeration is used while the number of candidate active sets stays below this.
pub const ENUMERATION_BUDGET: u64 = 1 << 18;
/// Largest `m` handled by enumeration.
pub const ENUMERATION_MAX_M: usize = 24;

const KKT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("instance is infeasible")]
    Infeasible,
    #[error("reference solution failed the KKT certificate: {0}")]
    NotCertified(String),
    #[error("reference methods disagree: {0}")]
    Disagreement(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    Enumeration,
    DualActiveSet,
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub z: DVector<f64>,
    pub lambda: DVector<f64>,
    /// Sorted indices of the constraints treated as active.
    pub active: Vec<usize>,
    pub objective: f64,
    pub method: OracleMethod,
    /// Largest KKT violation (stationarity, feasibility, sign, complementarity),
    /// scaled by problem magnitude.
    pub kkt_error: f64,
}

pub fn reference_oracle(inst: &QpInstance<'_>) -> Result<OracleSolution, OracleError> {
    if inst.m() <= ENUMERATION_MAX_M && subset_count(inst.m(), inst.n()) <= ENUMERATION_BUDGET {
        enumerate(inst)
    } else {
        dual_active_set(inst)
    }
}

/// `Σ_{k ≤ min(n, m)} C(m, k)`, saturating.
pub fn subset_count(m: usize, n: usize) -> u64 {
    let mut total: u64 = 0;
    let mut c: u64 = 1;
    for k in 0..=n.min(m) {
        total = total.saturating_add(c);
        c = c.saturating_mul((m - k) as u64) / (k as u64 + 1);
    }
    total
}

fn scale_of(inst: &QpInstance<'_>) -> f64 {
    1.0 + inst.lin().amax() + inst.offset().amax()
}

/// KKT violation of `(z, λ)`, relative to problem scale.
pub fn kkt_error(inst: &QpInstance<'_>, z: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let p = inst.problem();
    let scale = scale_of(inst) * (1.0 + lambda.amax()) * (1.0 + z.amax());
    let mut stat = p.hess() * z + inst.lin();
    stat.gemv_tr(1.0, p.cons(), lambda, 1.0);
    let gz = inst.eval_constraints(z);
    let feas = gz.iter().cloned().fold(0.0, f64::max);
    let sign = lambda.iter().map(|l| (-l).max(0.0)).fold(0.0, f64::max);
    let comp = gz
        .iter()
        .zip(lambda.iter())
        .map(|(g, l)| (g * l).abs())
        .fold(0.0, f64::max);
    stat.amax().max(feas).max(sign).max(comp) / scale
}

fn finish(
    inst: &QpInstance<'_>,
    z: DVector<f64>,
    lambda: DVector<f64>,
    mut active: Vec<usize>,
    method: OracleMethod,
) -> OracleSolution {
    active.sort_unstable();
    let kkt = kkt_error(inst, &z, &lambda);
    OracleSolution {
        objective: inst.eval_objective(&z),
        z,
        lambda,
        active,
        method,
        kkt_error: kkt,
    }
}

/// Tries every candidate active set of size `≤ min(n, m)` in order of size.
/// For a set `A`, `λ_A` solves `(G_A H⁻¹ G_Aᵀ) λ_A = g_A(z_free)` and
/// `z = z_free − H⁻¹ G_Aᵀ λ_A`; the first set with `λ_A ≥ 0` and `g(z) ≤ 0`
/// is optimal.
fn enumerate(inst: &QpInstance<'_>) -> Result<OracleSolution, OracleError> {
    let (n, m) = (inst.n(), inst.m());
    let p = inst.problem();
    let z_free = inst.unconstrained_minimizer();
    let g_free = inst.eval_constraints(&z_free);
    let dual_hess = p.cons() * p.hinv_gt();
    let tol = KKT_TOL * scale_of(inst);

    for size in 0..=n.min(m) {
        let mut subset: Vec<usize> = (0..size).collect();
        loop {
            if let Some(lam_a) = solve_subset(&dual_hess, &g_free, &subset) {
                if lam_a.iter().all(|&l| l >= -tol) {
                    let mut lambda = DVector::zeros(m);
                    for (k, &i) in subset.iter().enumerate() {
                        lambda[i] = lam_a[k].max(0.0);
                    }
                    let mut gz = g_free.clone();
                    gz.gemv(-1.0, &dual_hess, &lambda, 1.0);
                    if gz.iter().all(|&g| g <= tol) {
                        let z = inst.lagrangian_minimizer(&lambda);
                        return Ok(finish(inst, z, lambda, subset, OracleMethod::Enumeration));
                    }
                }
            }
            if !next_combination(&mut subset, m) {
                break;
            }
        }
    }
    Err(OracleError::Infeasible)
}

fn solve_subset(
    dual_hess: &DMatrix<f64>,
    g_free: &DVector<f64>,
    subset: &[usize],
) -> Option<DVector<f64>> {
    let k = subset.len();
    if k == 0 {
        return Some(DVector::zeros(0));
    }
    let s = DMatrix::from_fn(k, k, |a, b| dual_hess[(subset[a], subset[b])]);
    let rhs = DVector::from_fn(k, |a, _| g_free[subset[a]]);
    // Linearly dependent active rows make S singular; such sets are skipped.
    let chol = s.cholesky()?;
    let diag_min = (0..k)
        .map(|i| chol.l_dirty()[(i, i)])
        .fold(f64::INFINITY, f64::min);
    let diag_max = (0..k).map(|i| chol.l_dirty()[(i, i)]).fold(0.0, f64::max);
    if diag_min <= 1e-7 * diag_max {
        return None;
    }
    Some(chol.solve(&rhs))
}

fn next_combination(c: &mut [usize], m: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < m - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn dual_active_set(inst: &QpInstance<'_>) -> Result<OracleSolution, OracleError> {
    let (n, m) = (inst.n(), inst.m());
    let p = inst.problem();
    let mut qmat: Vec<f64> = (0..n * n).map(|k| p.hess()[(k / n, k % n)]).collect();
    let cvec: Vec<f64> = inst.lin().iter().cloned().collect();
    let amat: Vec<f64> = (0..m * n).map(|k| p.cons()[(k / n, k % n)]).collect();
    let bvec: Vec<f64> = inst.offset().iter().map(|v| -v).collect();
    let sol = match quadprog::solve_qp(&mut qmat, &cvec, &amat, &bvec, 0, false) {
        Ok(s) => s,
        Err(quadprog::Error::Infeasible) => return Err(OracleError::Infeasible),
        Err(e) => return Err(OracleError::NotCertified(e.to_string())),
    };
    let z = DVector::from_vec(sol.sol);
    let lambda = DVector::from_iterator(m, sol.lagr.iter().map(|l| l.max(0.0)));
    let out = finish(inst, z, lambda, sol.iact, OracleMethod::DualActiveSet);
    if out.kkt_error > KKT_TOL {
        return Err(OracleError::NotCertified(format!(
            "KKT error {:e}",
            out.kkt_error
        )));
    }

    // Independent cross-check: interior point from a generic start.
    let cfg = PdipConfig {
        epsilon: 1e-12,
        feas_tol: 1e-9,
        max_iters: 500,
        ..PdipConfig::default()
    };
    let z0 = inst.unconstrained_minimizer();
    let s0 = inst.eval_constraints(&z0).map(|g| (-g).max(1.0));
    let ipm = pdip_run(
        inst,
        PrimalDualPoint::new(z0, DVector::from_element(m, 1.0), s0),
        &cfg,
        false,
    );
    if ipm.termination == Termination::Converged {
        let f_ipm = inst.eval_objective(&ipm.point.z);
        let diff = (f_ipm - out.objective).abs();
        if diff > 1e-7 * (1.0 + out.objective.abs()) {
            return Err(OracleError::Disagreement(format!(
                "objective {} (active set) vs {} (interior point)",
                out.objective, f_ipm
            )));
        }
    }
    Ok(out)
}
