use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::run::{first_input, solve_scenario};
use super::{BenchmarkSuite, Scenario};
use crate::oracle::reference_oracle;

/// How each step's QP is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepSolver {
    Scenario(Scenario),
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub converged: bool,
    pub dfg_iters: usize,
    pub damped_iters: usize,
    pub pure_iters: usize,
    pub objective: f64,
    /// Largest amount by which the applied input leaves its bounds.
    pub input_excess: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedLoopStatus {
    Completed,
    /// The QP at the current state has no solution, or the solver failed.
    Halted {
        step: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopLog {
    /// `steps + 1` states when completed.
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub stats: Vec<StepStats>,
    pub status: ClosedLoopStatus,
    pub message: Option<String>,
    /// Every applied input within its bounds to `1e-9`.
    pub inputs_within_bounds: bool,
}

impl ClosedLoopLog {
    pub fn state_norms(&self) -> Vec<f64> {
        self.states
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// Simulates `x_{t+1} = A x_t + B u₀*(x_t)` for `steps` steps.
pub fn closed_loop(
    suite: &BenchmarkSuite,
    solver: StepSolver,
    x0: &DVector<f64>,
    steps: usize,
    eps: f64,
) -> ClosedLoopLog {
    assert!(steps >= 1, "closed loop needs at least one step");
    let n_u = suite.model.n_u();
    let mut x = x0.clone();
    let mut log = ClosedLoopLog {
        states: vec![x.iter().cloned().collect()],
        inputs: Vec::new(),
        stats: Vec::new(),
        status: ClosedLoopStatus::Completed,
        message: None,
        inputs_within_bounds: true,
    };
    let halt = |log: &mut ClosedLoopLog, step, msg: String| {
        log.status = ClosedLoopStatus::Halted { step };
        log.message = Some(msg);
    };

    for t in 0..steps {
        if let Err(e) = suite.condensed.check_initial_state(&x) {
            halt(&mut log, t, e.to_string());
            break;
        }
        let inst = match suite.condensed.qp.instance(x.clone()) {
            Ok(i) => i,
            Err(e) => {
                halt(&mut log, t, e.to_string());
                break;
            }
        };
        let (z, mut stats) = match solver {
            StepSolver::Oracle => match reference_oracle(&inst) {
                Ok(sol) => (
                    sol.z,
                    StepStats {
                        step: t,
                        converged: true,
                        dfg_iters: 0,
                        damped_iters: 0,
                        pure_iters: 0,
                        objective: sol.objective,
                        input_excess: 0.0,
                    },
                ),
                Err(e) => {
                    halt(&mut log, t, e.to_string());
                    break;
                }
            },
            StepSolver::Scenario(s) => match solve_scenario(&inst, &suite.constants, s, eps, false)
            {
                Ok(run) if run.report.converged() => (
                    run.report.z(),
                    StepStats {
                        step: t,
                        converged: true,
                        dfg_iters: run.report.phase1_iters,
                        damped_iters: run.report.damped_iters,
                        pure_iters: run.report.pure_iters,
                        objective: run.report.final_obj,
                        input_excess: 0.0,
                    },
                ),
                Ok(run) => {
                    halt(
                        &mut log,
                        t,
                        format!("solver stopped: {:?}", run.report.termination),
                    );
                    break;
                }
                Err(e) => {
                    halt(&mut log, t, e);
                    break;
                }
            },
        };
        let u = first_input(&z, n_u);
        let excess = suite.config.u_bounds.as_ref().map_or(0.0, |b| {
            (0..n_u)
                .map(|i| (u[i] - b.upper[i]).max(b.lower[i] - u[i]).max(0.0))
                .fold(0.0, f64::max)
        });
        stats.input_excess = excess;
        if excess > 1e-9 {
            log.inputs_within_bounds = false;
        }
        x = suite.model.step(&x, &u);
        log.inputs.push(u.iter().cloned().collect());
        log.states.push(x.iter().cloned().collect());
        log.stats.push(stats);
    }
    log
}
