use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dfg::{DfgOutcome, DfgStatus, DfgTraceRow};
use crate::pdip::{PdipOutcome, PdipTraceRow, Termination};
use crate::qp::{DualConstants, QpInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Dfg,
    Pdip,
    Hybrid,
}

impl std::str::FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dfg" => Ok(Self::Dfg),
            "pdip" => Ok(Self::Pdip),
            "hybrid" => Ok(Self::Hybrid),
            other => Err(format!(
                "unknown solver '{other}' (expected dfg, pdip or hybrid)"
            )),
        }
    }
}

/// Outcome of one solve. Phase 1 is the dual fast gradient, phase 2 the
/// interior-point iterations; a solver that has only one phase leaves the
/// other empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: SolverKind,
    pub termination: Termination,
    pub phase1_iters: usize,
    pub phase2_iters: usize,
    pub damped_iters: usize,
    pub pure_iters: usize,
    pub phase1_trace: Vec<DfgTraceRow>,
    pub phase2_trace: Vec<PdipTraceRow>,
    pub final_obj: f64,
    /// `μ` for interior-point runs, `f₀(z) − d(λ)` for the dual method alone.
    pub final_gap: f64,
    /// `(1/2m_d) ‖[g(z)]₊‖₂²` at the final iterate, when dual constants are known.
    pub suboptimality_bound: Option<f64>,
    /// `‖[g(z)]₊‖₂` at the final iterate.
    pub infeasibility: f64,
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn z(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.z)
    }

    pub fn total_iters(&self) -> usize {
        self.phase1_iters + self.phase2_iters
    }

    pub(crate) fn from_pdip(
        solver: SolverKind,
        inst: &QpInstance<'_>,
        consts: Option<&DualConstants>,
        phase1: Option<(usize, Vec<DfgTraceRow>)>,
        out: PdipOutcome,
    ) -> Self {
        let (phase1_iters, phase1_trace) = phase1.unwrap_or((0, Vec::new()));
        let z = &out.point.z;
        let infeasibility = inst.violation(z);
        Self {
            solver,
            termination: out.termination,
            phase1_iters,
            phase2_iters: out.iters,
            damped_iters: out.damped_iters,
            pure_iters: out.pure_iters,
            phase1_trace,
            phase2_trace: out.trace,
            final_obj: inst.eval_objective(z),
            final_gap: out.point.mu(),
            suboptimality_bound: consts.map(|c| infeasibility * infeasibility / (2.0 * c.m_d)),
            infeasibility,
            z: z.iter().cloned().collect(),
            lambda: out.point.lambda.iter().cloned().collect(),
        }
    }

    pub(crate) fn from_dfg(
        solver: SolverKind,
        inst: &QpInstance<'_>,
        consts: &DualConstants,
        out: DfgOutcome,
    ) -> Self {
        let final_obj = inst.eval_objective(&out.z);
        let gap = final_obj - inst.dual_value(&out.lambda);
        let infeasibility = out.violation;
        Self {
            solver,
            termination: match out.status {
                DfgStatus::Stopped => Termination::Converged,
                DfgStatus::CapExceeded => Termination::Cap,
            },
            phase1_iters: out.iters,
            phase2_iters: 0,
            damped_iters: 0,
            pure_iters: 0,
            phase1_trace: out.trace,
            phase2_trace: Vec::new(),
            final_obj,
            final_gap: gap,
            suboptimality_bound: Some(infeasibility * infeasibility / (2.0 * consts.m_d)),
            infeasibility,
            z: out.z.iter().cloned().collect(),
            lambda: out.lambda.iter().cloned().collect(),
        }
    }
}
