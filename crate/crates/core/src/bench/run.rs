use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BenchmarkSuite, InitRule, PublishedValues, Scenario};
use crate::dfg::DEFAULT_MAX_ITERS;
use crate::hybrid::{dfg_solve, hybrid_solve, ls_start, pdip_solve, HybridCaps, SwitchCertificate};
use crate::io::{write_dfg_trace, write_json, write_pdip_trace, IoError};
use crate::oracle::reference_oracle;
use crate::pdip::{PdipConfig, PdipTraceRow, Termination};
use crate::qp::{DualConstants, QpInstance};
use crate::report::SolveReport;

/// Pure-Newton iterations allowed per hybrid solve before the sweep is
/// flagged.
pub const MAX_PURE_ITERS: usize = 15;
/// Relative objective tolerance against the oracle.
pub const OBJ_REL_TOL: f64 = 1e-5;
/// Bound on `‖[g(z)]₊‖₂` for converged cells.
pub const VIOLATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub scenarios: Vec<Scenario>,
    pub eps: f64,
    /// Overrides the suite's repetition count when set.
    pub repetitions: Option<usize>,
    /// Run cells one after another so timings are free of contention.
    pub timing_strict: bool,
    /// Keep per-iteration traces in the result.
    pub traces: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            scenarios: Scenario::ALL.to_vec(),
            eps: 1e-6,
            repetitions: None,
            timing_strict: false,
            traces: true,
        }
    }
}

/// Result of one scenario solve on one instance.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: SolveReport,
    pub certificate: Option<SwitchCertificate>,
}

pub fn solve_scenario(
    inst: &QpInstance<'_>,
    consts: &DualConstants,
    scenario: Scenario,
    eps: f64,
    trace: bool,
) -> Result<ScenarioRun, String> {
    let cfg = PdipConfig::default().with_epsilon(eps);
    match scenario {
        Scenario::S1 | Scenario::S2 => {
            let level = scenario.lambda_level().expect("interior-point scenario");
            let (init, _) = ls_start(inst, level);
            Ok(ScenarioRun {
                report: pdip_solve(inst, init, &cfg, Some(consts), trace),
                certificate: None,
            })
        }
        Scenario::S3 => {
            let out = hybrid_solve(inst, consts, &cfg, HybridCaps::default(), trace)
                .map_err(|e| e.to_string())?;
            Ok(ScenarioRun {
                report: out.report,
                certificate: out.certificate,
            })
        }
        Scenario::S4 => Ok(ScenarioRun {
            report: dfg_solve(inst, consts, eps, DEFAULT_MAX_ITERS, trace),
            certificate: None,
        }),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub state_index: usize,
    pub x0: Vec<f64>,
    pub scenario: Scenario,
    pub init_rule: InitRule,
    /// Set when the solver could not be run at all.
    pub error: Option<String>,
    pub termination: Option<Termination>,
    pub converged: bool,
    pub dfg_iters: usize,
    pub damped_iters: usize,
    pub pure_iters: usize,
    pub k_switch: Option<usize>,
    pub handoff_floors: Option<(usize, usize)>,
    pub objective: f64,
    pub oracle_objective: Option<f64>,
    pub objective_error_rel: Option<f64>,
    pub infeasibility: f64,
    /// Raw wall-clock samples of the solve call, nanoseconds.
    pub times_ns: Vec<u64>,
    pub median_s: f64,
    pub std_s: f64,
    #[serde(skip)]
    pub report: Option<SolveReport>,
    #[serde(skip)]
    pub certificate: Option<SwitchCertificate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table1Row {
    pub scenario: u8,
    pub init_rule: InitRule,
    pub cells: usize,
    pub converged: usize,
    pub damped_mean: f64,
    pub damped_max: usize,
    pub pure_mean: f64,
    pub pure_max: usize,
    pub dfg_mean: f64,
    pub dfg_max: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table2Row {
    pub scenario: u8,
    pub best_s: f64,
    pub worst_s: f64,
    pub average_s: f64,
    /// Mean over initial states of the per-state standard deviation.
    pub average_deviation_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    pub suite: String,
    pub eps: f64,
    pub repetitions: usize,
    pub timing_strict: bool,
    pub constants: DualConstants,
    pub reference: PublishedValues,
    pub n: usize,
    pub m: usize,
    pub initial_states: usize,
    pub cells: Vec<CellResult>,
    pub table1: Vec<Table1Row>,
    pub table2: Vec<Table2Row>,
    /// Structural claims; any failure makes the sweep fail.
    pub assertions: Vec<Assertion>,
    /// Solver-behaviour checks reported alongside, not part of the verdict.
    pub diagnostics: Vec<Assertion>,
    pub sweep_seconds: f64,
}

impl BenchResult {
    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn cells_for(&self, scenario: Scenario) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(move |c| c.scenario == scenario)
    }

    /// Mean over initial states of the median solve time, seconds.
    pub fn average_time(&self, scenario: Scenario) -> Option<f64> {
        self.table2
            .iter()
            .find(|r| r.scenario == scenario.id())
            .map(|r| r.average_s)
    }
}

fn median(sorted: &[u64]) -> f64 {
    sorted[sorted.len() / 2] as f64
}

/// Sample standard deviation; zero for a single sample.
fn std_dev(v: &[u64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    var.sqrt()
}

fn run_cell(
    suite: &BenchmarkSuite,
    state_index: usize,
    scenario: Scenario,
    oracle_obj: Option<f64>,
    eps: f64,
    reps: usize,
    keep_trace: bool,
) -> CellResult {
    let x0 = &suite.initial_states[state_index];
    let mut cell = CellResult {
        state_index,
        x0: x0.iter().cloned().collect(),
        scenario,
        init_rule: scenario.init_rule(),
        error: None,
        termination: None,
        converged: false,
        dfg_iters: 0,
        damped_iters: 0,
        pure_iters: 0,
        k_switch: None,
        handoff_floors: None,
        objective: f64::NAN,
        oracle_objective: oracle_obj,
        objective_error_rel: None,
        infeasibility: f64::NAN,
        times_ns: Vec::new(),
        median_s: f64::NAN,
        std_s: f64::NAN,
        report: None,
        certificate: None,
    };
    let inst = match suite.condensed.qp.instance(x0.clone()) {
        Ok(i) => i,
        Err(e) => {
            cell.error = Some(e.to_string());
            return cell;
        }
    };
    let consts = &suite.constants;

    // Traced run for the record; timed runs below are untraced.
    let run = match solve_scenario(&inst, consts, scenario, eps, keep_trace) {
        Ok(r) => r,
        Err(e) => {
            cell.error = Some(e);
            return cell;
        }
    };
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        let r = solve_scenario(&inst, consts, scenario, eps, false);
        times.push(t.elapsed().as_nanos() as u64);
        std::hint::black_box(&r);
    }
    let std = std_dev(&times);
    let mut sorted = times.clone();
    sorted.sort_unstable();

    let rep = &run.report;
    cell.termination = Some(rep.termination);
    cell.converged = rep.converged();
    cell.dfg_iters = rep.phase1_iters;
    cell.damped_iters = rep.damped_iters;
    cell.pure_iters = rep.pure_iters;
    cell.k_switch = run.certificate.as_ref().map(|c| c.k_switch);
    cell.handoff_floors = run
        .certificate
        .as_ref()
        .map(|c| (c.lambda_floors, c.slack_floors));
    cell.objective = rep.final_obj;
    cell.objective_error_rel = oracle_obj.map(|f| (rep.final_obj - f).abs() / (1.0 + f.abs()));
    cell.infeasibility = rep.infeasibility;
    cell.median_s = median(&sorted) * 1e-9;
    cell.std_s = std * 1e-9;
    cell.times_ns = times;
    cell.report = Some(run.report);
    cell.certificate = run.certificate;
    cell
}

/// Runs every (initial state, scenario) cell. Solver failures are recorded in
/// the cell and never abort the sweep.
pub fn run_scenarios(suite: &BenchmarkSuite, opts: &BenchOptions) -> BenchResult {
    let start = Instant::now();
    let reps = opts.repetitions.unwrap_or(suite.repetitions);
    let oracle: Vec<Option<f64>> = suite
        .initial_states
        .iter()
        .map(|x0| {
            let inst = suite.condensed.qp.instance(x0.clone()).ok()?;
            reference_oracle(&inst).ok().map(|s| s.objective)
        })
        .collect();

    let jobs: Vec<(usize, Scenario)> = (0..suite.initial_states.len())
        .flat_map(|i| opts.scenarios.iter().map(move |&s| (i, s)))
        .collect();
    let work =
        |&(i, s): &(usize, Scenario)| run_cell(suite, i, s, oracle[i], opts.eps, reps, opts.traces);
    let cells: Vec<CellResult> = if opts.timing_strict {
        jobs.iter().map(work).collect()
    } else {
        jobs.par_iter().map(work).collect()
    };

    let table1 = table1(&cells, &opts.scenarios);
    let table2 = table2(&cells, &opts.scenarios);
    let mut result = BenchResult {
        suite: suite.name.clone(),
        eps: opts.eps,
        repetitions: reps,
        timing_strict: opts.timing_strict,
        constants: suite.constants,
        reference: suite.reference.clone(),
        n: suite.condensed.qp.n(),
        m: suite.condensed.qp.m(),
        initial_states: suite.initial_states.len(),
        cells,
        table1,
        table2,
        assertions: Vec::new(),
        diagnostics: Vec::new(),
        sweep_seconds: 0.0,
    };
    (result.assertions, result.diagnostics) = checks(&result);
    result.sweep_seconds = start.elapsed().as_secs_f64();
    result
}

fn mean_usize(v: impl Iterator<Item = usize>) -> f64 {
    let (s, n) = v.fold((0usize, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s as f64 / n as f64
    }
}

fn table1(cells: &[CellResult], scenarios: &[Scenario]) -> Vec<Table1Row> {
    scenarios
        .iter()
        .map(|&s| {
            let c: Vec<&CellResult> = cells.iter().filter(|c| c.scenario == s).collect();
            Table1Row {
                scenario: s.id(),
                init_rule: s.init_rule(),
                cells: c.len(),
                converged: c.iter().filter(|c| c.converged).count(),
                damped_mean: mean_usize(c.iter().map(|c| c.damped_iters)),
                damped_max: c.iter().map(|c| c.damped_iters).max().unwrap_or(0),
                pure_mean: mean_usize(c.iter().map(|c| c.pure_iters)),
                pure_max: c.iter().map(|c| c.pure_iters).max().unwrap_or(0),
                dfg_mean: mean_usize(c.iter().map(|c| c.dfg_iters)),
                dfg_max: c.iter().map(|c| c.dfg_iters).max().unwrap_or(0),
            }
        })
        .collect()
}

fn table2(cells: &[CellResult], scenarios: &[Scenario]) -> Vec<Table2Row> {
    scenarios
        .iter()
        .map(|&s| {
            let c: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.scenario == s && c.error.is_none())
                .collect();
            let k = c.len().max(1) as f64;
            Table2Row {
                scenario: s.id(),
                best_s: c.iter().map(|c| c.median_s).fold(f64::INFINITY, f64::min),
                worst_s: c.iter().map(|c| c.median_s).fold(0.0, f64::max),
                average_s: c.iter().map(|c| c.median_s).sum::<f64>() / k,
                average_deviation_s: c.iter().map(|c| c.std_s).sum::<f64>() / k,
            }
        })
        .collect()
}

fn mu_nonincreasing(trace: &[PdipTraceRow]) -> bool {
    trace.windows(2).all(|w| w[1].mu <= w[0].mu * (1.0 + 1e-12))
}

fn assertion(name: &str, bad: Vec<String>) -> Assertion {
    Assertion {
        name: name.to_string(),
        passed: bad.is_empty(),
        detail: if bad.is_empty() {
            "ok".into()
        } else {
            bad.join("; ")
        },
    }
}

fn checks(res: &BenchResult) -> (Vec<Assertion>, Vec<Assertion>) {
    let mut out = Vec::new();
    let mut diag = Vec::new();
    let mut push = |name: &str, bad: Vec<String>| out.push(assertion(name, bad));

    let errors: Vec<String> = res
        .cells
        .iter()
        .filter_map(|c| {
            c.error
                .as_ref()
                .map(|e| format!("x{} s{}: {e}", c.state_index, c.scenario.id()))
        })
        .collect();
    push("no_solver_errors", errors);

    if res.cells.iter().any(|c| c.scenario == Scenario::S3) {
        let bad = res
            .cells_for(Scenario::S3)
            .filter(|c| c.k_switch.is_some() && c.damped_iters > 0)
            .map(|c| format!("x{}: {} damped", c.state_index, c.damped_iters))
            .collect();
        push("hybrid_zero_damped", bad);
        let bad = res
            .cells_for(Scenario::S3)
            .filter(|c| c.k_switch.is_some() && c.pure_iters > MAX_PURE_ITERS)
            .map(|c| format!("x{}: {} pure", c.state_index, c.pure_iters))
            .collect();
        push("hybrid_pure_iters_bounded", bad);
    }

    let bad = res
        .cells
        .iter()
        .filter(|c| c.error.is_none() && !c.converged)
        .map(|c| {
            format!(
                "x{} s{}: {:?}",
                c.state_index,
                c.scenario.id(),
                c.termination
            )
        })
        .collect();
    diag.push(assertion("all_cells_converged", bad));

    let bad = res
        .cells
        .iter()
        .filter(|c| c.converged)
        .filter(|c| {
            c.objective_error_rel.is_none_or(|e| e > OBJ_REL_TOL) || c.infeasibility > VIOLATION_TOL
        })
        .map(|c| {
            format!(
                "x{} s{}: rel err {:?}, violation {:e}",
                c.state_index,
                c.scenario.id(),
                c.objective_error_rel,
                c.infeasibility
            )
        })
        .collect();
    push("oracle_agreement", bad);

    let bad = res
        .cells
        .iter()
        .filter(|c| {
            c.report
                .as_ref()
                .is_some_and(|r| !mu_nonincreasing(&r.phase2_trace))
        })
        .map(|c| format!("x{} s{}", c.state_index, c.scenario.id()))
        .collect();
    diag.push(assertion("mu_nonincreasing", bad));

    let has = |s: Scenario| res.cells.iter().any(|c| c.scenario == s);
    if has(Scenario::S3) && has(Scenario::S4) {
        let mean = |s: Scenario| mean_usize(res.cells_for(s).map(|c| c.dfg_iters));
        let (m3, m4) = (mean(Scenario::S3), mean(Scenario::S4));
        let bad = if m4 > m3 {
            Vec::new()
        } else {
            vec![format!(
                "dual-only mean {m4:.1} vs hybrid dual phase mean {m3:.1}"
            )]
        };
        push("dual_only_needs_more_iterations", bad);
    }
    (out, diag)
}

fn trace_name(suite: &str, c: &CellResult, part: &str) -> String {
    format!(
        "{suite}_s{}_x{:03}{part}.csv",
        c.scenario.id(),
        c.state_index
    )
}

/// Writes `summary_table1.csv`, `summary_table2.csv`, `traces/*.csv` and
/// `report.json` under `dir`.
pub fn write_outputs(res: &BenchResult, dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir.join("traces"))?;

    let mut w = csv::Writer::from_path(dir.join("summary_table1.csv"))?;
    for r in &res.table1 {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("summary_table2.csv"))?;
    for r in &res.table2 {
        w.serialize(r)?;
    }
    w.flush()?;

    for c in &res.cells {
        let Some(rep) = &c.report else { continue };
        let traces = dir.join("traces");
        match c.scenario {
            Scenario::S1 | Scenario::S2 => {
                let f = fs::File::create(traces.join(trace_name(&res.suite, c, "")))?;
                write_pdip_trace(f, &rep.phase2_trace)?;
            }
            Scenario::S3 => {
                let f = fs::File::create(traces.join(trace_name(&res.suite, c, "_dfg")))?;
                write_dfg_trace(f, &rep.phase1_trace)?;
                let f = fs::File::create(traces.join(trace_name(&res.suite, c, "_pdip")))?;
                write_pdip_trace(f, &rep.phase2_trace)?;
            }
            Scenario::S4 => {
                let f = fs::File::create(traces.join(trace_name(&res.suite, c, "")))?;
                write_dfg_trace(f, &rep.phase1_trace)?;
            }
        }
    }
    write_json(&dir.join("report.json"), res)
}

/// Convenience for callers holding only a state vector.
pub(crate) fn first_input(z: &DVector<f64>, n_u: usize) -> DVector<f64> {
    z.rows(0, n_u).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_std() {
        let mut v = vec![5, 1, 3];
        v.sort_unstable();
        assert_eq!(median(&v), 3.0);
        assert!((std_dev(&[1, 3, 5]) - 2.0).abs() < 1e-12);
        assert_eq!(std_dev(&[7]), 0.0);
    }

    #[test]
    fn mu_check_detects_increase() {
        let row = |mu| PdipTraceRow {
            k: 0,
            phase: crate::pdip::Phase::Pure,
            rho: 1.0,
            mu,
            tau: 0.1 * mu,
            r_dual_norm: 0.0,
            r_pri_norm: 0.0,
            r_cent_norm: 0.0,
            obj: 0.0,
            r_next_norm: 0.0,
            wall_ns: 0,
        };
        assert!(mu_nonincreasing(&[row(1.0), row(0.1)]));
        assert!(!mu_nonincreasing(&[row(0.1), row(1.0)]));
    }
}
