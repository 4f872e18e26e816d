//! Dual fast gradient until the dual switching test passes, then pure Newton
//! interior-point iterations from the hand-off point.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfg::{dfg_run, DfgOptions, DfgStatus};
use crate::pdip::{pdip_run, slack_from_constraints, PdipConfig, Termination};
use crate::qp::{positive_part_norm, DualConstants, PrimalDualPoint, QpInstance};
use crate::report::{SolveReport, SolverKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HybridError {
    #[error("duality-gap tolerance {eps} must be below the switching threshold eta_d = {eta_d}")]
    TolerancesOrder { eps: f64, eta_d: f64 },
    #[error("invalid interior-point configuration: {0}")]
    Config(String),
}

/// Record of the switch from the dual phase to the Newton phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchCertificate {
    pub k_switch: usize,
    /// `‖[g(z_DFG)]₊‖₂`
    pub violation_at_switch: f64,
    pub eta_d: f64,
    pub handoff: PrimalDualPoint,
    pub mu_at_handoff: f64,
    pub lambda_floors: usize,
    pub slack_floors: usize,
    /// `s₀ᵀλ₀`
    pub gap_at_handoff: f64,
    /// `[g(z_DFG)]₊ᵀλ₀`
    pub violated_gap_at_handoff: f64,
}

/// `‖[g(z)]₊‖₂ ≤ eta_d`
pub fn switch_condition(inst: &QpInstance<'_>, z: &DVector<f64>, eta_d: f64) -> bool {
    positive_part_norm(&inst.eval_constraints(z)) <= eta_d
}

/// Hand-off point built from the dual phase output.
#[derive(Debug, Clone, PartialEq)]
pub struct Handoff {
    pub point: PrimalDualPoint,
    pub lambda_floors: usize,
    pub slack_floors: usize,
    pub gap: f64,
    pub violated_gap: f64,
}

/// `z₀ = z_DFG`, `s₀ = |g(z_DFG)|` and `λ₀ = λ_DFG`, each of `s₀`, `λ₀`
/// floored at `1e-8 · max(1, ‖·‖_∞)` of its source vector.
pub fn handoff(inst: &QpInstance<'_>, z_dfg: &DVector<f64>, lambda_dfg: &DVector<f64>) -> Handoff {
    let gz = inst.eval_constraints(z_dfg);
    let (s, slack_floors) = slack_from_constraints(&gz);
    let floor = 1e-8 * lambda_dfg.amax().max(1.0);
    let mut lambda_floors = 0;
    let lambda = lambda_dfg.map(|l| {
        if l < floor {
            lambda_floors += 1;
            floor
        } else {
            l
        }
    });
    let gap = s.dot(&lambda);
    let violated_gap = gz
        .iter()
        .zip(lambda.iter())
        .map(|(g, l)| g.max(0.0) * l)
        .sum();
    Handoff {
        point: PrimalDualPoint::new(z_dfg.clone(), lambda, s),
        lambda_floors,
        slack_floors,
        gap,
        violated_gap,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HybridCaps {
    pub dfg_max_iters: usize,
    pub pdip_max_iters: usize,
}

impl Default for HybridCaps {
    fn default() -> Self {
        Self {
            dfg_max_iters: crate::dfg::DEFAULT_MAX_ITERS,
            pdip_max_iters: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HybridOutcome {
    pub z: DVector<f64>,
    pub report: SolveReport,
    /// `None` when the dual phase hit its cap before the switch.
    pub certificate: Option<SwitchCertificate>,
}

pub fn hybrid_solve(
    inst: &QpInstance<'_>,
    consts: &DualConstants,
    cfg: &PdipConfig,
    caps: HybridCaps,
    trace: bool,
) -> Result<HybridOutcome, HybridError> {
    cfg.validate().map_err(HybridError::Config)?;
    if !(cfg.epsilon < consts.eta_d) {
        return Err(HybridError::TolerancesOrder {
            eps: cfg.epsilon,
            eta_d: consts.eta_d,
        });
    }
    let dfg = dfg_run(
        inst,
        consts,
        DVector::zeros(inst.m()),
        &DfgOptions::switch(consts.eta_d)
            .with_max_iters(caps.dfg_max_iters)
            .with_trace(trace),
    );
    if dfg.status == DfgStatus::CapExceeded {
        let z = dfg.z.clone();
        let mut report = SolveReport::from_dfg(SolverKind::Hybrid, inst, consts, dfg);
        report.termination = Termination::Cap;
        return Ok(HybridOutcome {
            z,
            report,
            certificate: None,
        });
    }

    let h = handoff(inst, &dfg.z, &dfg.lambda);
    let certificate = SwitchCertificate {
        k_switch: dfg.k_last,
        violation_at_switch: dfg.violation,
        eta_d: consts.eta_d,
        mu_at_handoff: h.point.mu(),
        handoff: h.point.clone(),
        lambda_floors: h.lambda_floors,
        slack_floors: h.slack_floors,
        gap_at_handoff: h.gap,
        violated_gap_at_handoff: h.violated_gap,
    };
    let pdip_cfg = PdipConfig {
        max_iters: caps.pdip_max_iters,
        ..*cfg
    };
    let mut out = pdip_run(inst, h.point, &pdip_cfg, true);
    if !trace {
        out.trace.clear();
    }
    let z = out.point.z.clone();
    let report = SolveReport::from_pdip(
        SolverKind::Hybrid,
        inst,
        Some(consts),
        Some((dfg.iters, dfg.trace)),
        out,
    );
    Ok(HybridOutcome {
        z,
        report,
        certificate: Some(certificate),
    })
}

/// Interior-point method alone from the given start.
pub fn pdip_solve(
    inst: &QpInstance<'_>,
    init: PrimalDualPoint,
    cfg: &PdipConfig,
    consts: Option<&DualConstants>,
    trace: bool,
) -> SolveReport {
    let mut out = pdip_run(inst, init, cfg, false);
    if !trace {
        out.trace.clear();
    }
    SolveReport::from_pdip(SolverKind::Pdip, inst, consts, None, out)
}

/// Dual fast gradient alone from `λ = 0`, stopped on the primal-dual gap.
pub fn dfg_solve(
    inst: &QpInstance<'_>,
    consts: &DualConstants,
    eps: f64,
    max_iters: usize,
    trace: bool,
) -> SolveReport {
    let out = dfg_run(
        inst,
        consts,
        DVector::zeros(inst.m()),
        &DfgOptions::gap(eps)
            .with_max_iters(max_iters)
            .with_trace(trace),
    );
    SolveReport::from_dfg(SolverKind::Dfg, inst, consts, out)
}

/// Start used by the interior-point method when none is supplied: the
/// unconstrained minimizer, the given multiplier level, and slacks from
/// [`slack_from_constraints`].
pub fn ls_start(inst: &QpInstance<'_>, lambda_level: f64) -> (PrimalDualPoint, usize) {
    let z = inst.unconstrained_minimizer();
    let (s, floors) = slack_from_constraints(&inst.eval_constraints(&z));
    (
        PrimalDualPoint::new(z, DVector::from_element(inst.m(), lambda_level), s),
        floors,
    )
}
