use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hqp::bench::{
    cessna_benchmark, planar_benchmark, run_scenarios, write_outputs, BenchOptions, Scenario,
};
use hqp::hybrid::{dfg_solve, hybrid_solve, ls_start, pdip_solve, HybridCaps};
use hqp::io::{
    read_json, read_state, write_dfg_trace, write_json, write_pdip_trace, ModelFile, QpFile,
};
use hqp::{condense, dual_constants, DualConstants, PdipConfig, SolveReport, SolverKind};

#[derive(Parser)]
#[command(
    name = "hqp",
    version,
    about = "Dense QP solvers for condensed linear MPC"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one QP file.
    Solve(SolveArgs),
    /// Build the condensed QP of an MPC model at a given state.
    Condense(CondenseArgs),
    /// Run a benchmark suite.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    qp: PathBuf,
    #[arg(long, value_parser = parse_solver)]
    solver: SolverKind,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    /// Switching threshold; `L_dH` is then derived as `m_d² / η_d`.
    #[arg(long = "eta-d", conflicts_with = "ldh")]
    eta_d: Option<f64>,
    /// Lipschitz bound of the dual Hessian; `η_d = m_d² / L_dH`.
    #[arg(long)]
    ldh: Option<f64>,
    /// Trace CSV. For the hybrid solver the dual phase goes to `<stem>_dfg.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CondenseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Planar,
    Cessna,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    #[arg(long, default_value = "1,2,3,4", value_delimiter = ',')]
    scenarios: Vec<u8>,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    #[arg(long, default_value_t = 11)]
    reps: usize,
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
    /// Run cells sequentially so timings are free of contention.
    #[arg(long)]
    timing_strict: bool,
}

fn parse_solver(s: &str) -> Result<SolverKind, String> {
    s.parse()
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve(a) => solve(a),
        Command::Condense(a) => condense_cmd(a),
        Command::Bench(a) => bench(a),
    }
}

fn constants(
    qp: &hqp::CondensedQp,
    eta_d: Option<f64>,
    ldh: Option<f64>,
) -> Result<Option<DualConstants>> {
    Ok(match (eta_d, ldh) {
        (Some(eta), None) => {
            if !(eta > 0.0) {
                bail!("--eta-d must be positive");
            }
            let c = dual_constants(qp, 1.0)?;
            Some(DualConstants {
                l_dh: c.m_d * c.m_d / eta,
                eta_d: eta,
                ..c
            })
        }
        (None, Some(l)) => Some(dual_constants(qp, l)?),
        _ => None,
    })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    path.with_file_name(format!("{stem}{suffix}.csv"))
}

fn solve(a: SolveArgs) -> Result<ExitCode> {
    let file: QpFile = read_json(&a.qp).with_context(|| format!("reading {}", a.qp.display()))?;
    let (qp, x_t) = file.to_problem()?;
    let inst = qp.instance(x_t)?;
    let consts = constants(&qp, a.eta_d, a.ldh)?;
    let tracing = a.trace.is_some();
    let cfg = PdipConfig::default().with_epsilon(a.eps);

    let report: SolveReport = match a.solver {
        SolverKind::Pdip => {
            let (init, _) = ls_start(&inst, 1.0);
            pdip_solve(&inst, init, &cfg, consts.as_ref(), tracing)
        }
        SolverKind::Dfg => {
            let c = consts.unwrap_or(dual_constants(&qp, 1.0)?);
            dfg_solve(&inst, &c, a.eps, hqp::dfg::DEFAULT_MAX_ITERS, tracing)
        }
        SolverKind::Hybrid => {
            let Some(c) = consts else {
                bail!("the hybrid solver needs --eta-d or --ldh");
            };
            let out = hybrid_solve(&inst, &c, &cfg, HybridCaps::default(), tracing)?;
            if let Some(cert) = &out.certificate {
                eprintln!(
                    "switched after {} dual iterations (violation {:.3e} <= eta_d {:.3e})",
                    cert.k_switch + 1,
                    cert.violation_at_switch,
                    cert.eta_d
                );
            }
            out.report
        }
    };

    if let Some(path) = &a.trace {
        match a.solver {
            SolverKind::Dfg => write_dfg_trace(File::create(path)?, &report.phase1_trace)?,
            SolverKind::Pdip => write_pdip_trace(File::create(path)?, &report.phase2_trace)?,
            SolverKind::Hybrid => {
                write_pdip_trace(File::create(path)?, &report.phase2_trace)?;
                write_dfg_trace(File::create(sibling(path, "_dfg"))?, &report.phase1_trace)?;
            }
        }
    }
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    println!(
        "termination={:?} objective={:.10e} gap={:.3e} infeasibility={:.3e} dfg_iters={} damped={} pure={}",
        report.termination,
        report.final_obj,
        report.final_gap,
        report.infeasibility,
        report.phase1_iters,
        report.damped_iters,
        report.pure_iters
    );
    Ok(if report.converged() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn condense_cmd(a: CondenseArgs) -> Result<ExitCode> {
    let file: ModelFile =
        read_json(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let (model, cfg) = file.to_model()?;
    let x0 = read_state(&a.state).with_context(|| format!("reading {}", a.state.display()))?;
    if x0.len() != model.n_x() {
        bail!(
            "state has length {}, model has {} states",
            x0.len(),
            model.n_x()
        );
    }
    let c = condense(&model, &cfg)?;
    c.check_initial_state(&x0)?;
    write_json(&a.out, &QpFile::from_problem(&c.qp, Some(&x0)))?;
    println!(
        "n={} m={} n_x={} dropped_rows={}",
        c.qp.n(),
        c.qp.m(),
        c.qp.n_x(),
        c.fixed_rows.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    let scenarios = a
        .scenarios
        .iter()
        .map(|&id| Scenario::from_id(id).with_context(|| format!("unknown scenario {id}")))
        .collect::<Result<Vec<_>>>()?;
    let suite = match a.suite {
        Suite::Planar => planar_benchmark(),
        Suite::Cessna => cessna_benchmark(),
    }
    .with_repetitions(a.reps)?;
    let opts = BenchOptions {
        scenarios,
        eps: a.eps,
        repetitions: None,
        timing_strict: a.timing_strict,
        traces: true,
    };
    let res = run_scenarios(&suite, &opts);
    write_outputs(&res, &a.out_dir)?;

    println!(
        "suite={} states={} n={} m={} m_d={:.4e} L_d={:.4e} eta_d={:.4e} sweep={:.2}s",
        res.suite,
        res.initial_states,
        res.n,
        res.m,
        res.constants.m_d,
        res.constants.l_d,
        res.constants.eta_d,
        res.sweep_seconds
    );
    println!("scenario  converged  damped(mean/max)  pure(mean/max)  dfg(mean/max)");
    for r in &res.table1 {
        println!(
            "{:>8}  {:>4}/{:<4}  {:>7.2}/{:<6}  {:>7.2}/{:<5}  {:>8.1}/{}",
            r.scenario,
            r.converged,
            r.cells,
            r.damped_mean,
            r.damped_max,
            r.pure_mean,
            r.pure_max,
            r.dfg_mean,
            r.dfg_max
        );
    }
    println!("scenario  best[s]     worst[s]    average[s]  avg-dev[s]");
    for r in &res.table2 {
        println!(
            "{:>8}  {:.4e}  {:.4e}  {:.4e}  {:.4e}",
            r.scenario, r.best_s, r.worst_s, r.average_s, r.average_deviation_s
        );
    }
    for asr in &res.assertions {
        println!(
            "[{}] {}: {}",
            if asr.passed { "pass" } else { "FAIL" },
            asr.name,
            asr.detail
        );
    }
    Ok(if res.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
