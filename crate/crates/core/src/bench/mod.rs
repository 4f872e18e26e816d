//! Benchmark suites, scenario runner and closed-loop simulation.

mod closed_loop;
mod run;

pub use closed_loop::{closed_loop, ClosedLoopLog, ClosedLoopStatus, StepSolver, StepStats};
pub use run::{
    run_scenarios, solve_scenario, write_outputs, Assertion, BenchOptions, BenchResult, CellResult,
    ScenarioRun, Table1Row, Table2Row,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::condense::{condense, BoxBounds, Condensed, LtiModel, MpcConfig};
use crate::oracle::reference_oracle;
use crate::qp::{dual_constants, DualConstants, QpError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    LsWarmLambdaOne,
    LsWarmLambdaSmall,
    HybridDefault,
    DfgOnly,
}

/// One of the four solver configurations compared by the benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    /// Interior point from `z_LS` with `λ₀ = 1`.
    S1,
    /// Interior point from `z_LS` with `λ₀ = 1e-6`.
    S2,
    /// Hybrid.
    S3,
    /// Dual fast gradient alone.
    S4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4];

    pub fn id(self) -> u8 {
        match self {
            Scenario::S1 => 1,
            Scenario::S2 => 2,
            Scenario::S3 => 3,
            Scenario::S4 => 4,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.id() == id)
    }

    pub fn init_rule(self) -> InitRule {
        match self {
            Scenario::S1 => InitRule::LsWarmLambdaOne,
            Scenario::S2 => InitRule::LsWarmLambdaSmall,
            Scenario::S3 => InitRule::HybridDefault,
            Scenario::S4 => InitRule::DfgOnly,
        }
    }

    pub fn solver(self) -> crate::report::SolverKind {
        use crate::report::SolverKind;
        match self {
            Scenario::S1 | Scenario::S2 => SolverKind::Pdip,
            Scenario::S3 => SolverKind::Hybrid,
            Scenario::S4 => SolverKind::Dfg,
        }
    }

    /// Initial multiplier level for the interior-point scenarios.
    pub fn lambda_level(self) -> Option<f64> {
        match self {
            Scenario::S1 => Some(1.0),
            Scenario::S2 => Some(1e-6),
            _ => None,
        }
    }
}

/// Published figures for the original instance of a case study. Kept for
/// reference in reports only; the suites use stand-in plants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedValues {
    pub m_d: Option<f64>,
    pub eta_d: Option<f64>,
    pub l_dh: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkSuite {
    pub name: String,
    pub model: LtiModel,
    pub config: MpcConfig,
    pub condensed: Condensed,
    pub initial_states: Vec<DVector<f64>>,
    /// Timing repetitions per cell; odd so the median is a sample.
    pub repetitions: usize,
    pub constants: DualConstants,
    pub reference: PublishedValues,
}

impl BenchmarkSuite {
    pub fn new(
        name: &str,
        model: LtiModel,
        config: MpcConfig,
        initial_states: Vec<DVector<f64>>,
        repetitions: usize,
        l_dh: f64,
        reference: PublishedValues,
    ) -> Result<Self, SuiteError> {
        if repetitions == 0 || repetitions.is_multiple_of(2) {
            return Err(SuiteError::Repetitions(repetitions));
        }
        let condensed = condense(&model, &config).map_err(|e| SuiteError::Build(e.to_string()))?;
        let constants = dual_constants(&condensed.qp, l_dh)?;
        Ok(Self {
            name: name.to_string(),
            model,
            config,
            condensed,
            initial_states,
            repetitions,
            constants,
            reference,
        })
    }

    pub fn with_repetitions(mut self, repetitions: usize) -> Result<Self, SuiteError> {
        if repetitions == 0 || repetitions.is_multiple_of(2) {
            return Err(SuiteError::Repetitions(repetitions));
        }
        self.repetitions = repetitions;
        Ok(self)
    }

    /// Whether the QP for `x0` has a feasible point, according to the oracle.
    pub fn is_feasible(&self, x0: &DVector<f64>) -> bool {
        if self.condensed.check_initial_state(x0).is_err() {
            return false;
        }
        match self.condensed.qp.instance(x0.clone()) {
            Ok(inst) => reference_oracle(&inst).is_ok(),
            Err(_) => false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("repetitions must be odd and positive, got {0}")]
    Repetitions(usize),
    #[error("suite construction failed: {0}")]
    Build(String),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Stand-in planar plant: `A = [[1.2, 0.5], [0, 1.1]]`, `B = [0, 1]ᵀ`, `C = I`,
/// `|u| ≤ 1`, `|y| ≤ 1`, `N = 10`, `L_dH = 200`. Initial states are the points
/// of a 9×9 grid on `[-0.8, 0.8]²` whose QP is feasible.
pub fn planar_benchmark() -> BenchmarkSuite {
    let model = LtiModel::new(
        DMatrix::from_row_slice(2, 2, &[1.2, 0.5, 0.0, 1.1]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::identity(2, 2),
        DMatrix::zeros(2, 1),
    )
    .expect("planar model dimensions");
    let config = MpcConfig {
        horizon: 10,
        q: DMatrix::identity(2, 2),
        r: DMatrix::identity(1, 1),
        u_bounds: Some(BoxBounds::symmetric(DVector::from_element(1, 1.0))),
        x_bounds: None,
        y_bounds: Some(BoxBounds::symmetric(DVector::from_element(2, 1.0))),
        du_bounds: None,
    };
    let reference = PublishedValues {
        m_d: Some(1.4529),
        eta_d: Some(0.0106),
        l_dh: Some(200.0),
        notes: vec!["original planar plant matrices are not reproduced; stand-in used".into()],
    };
    let mut suite = BenchmarkSuite::new("planar", model, config, Vec::new(), 11, 200.0, reference)
        .expect("planar suite");
    let grid: Vec<f64> = (0..9).map(|i| -0.8 + 0.2 * i as f64).collect();
    let mut states = Vec::new();
    for &a in &grid {
        for &b in &grid {
            let x = DVector::from_vec(vec![round_grid(a), round_grid(b)]);
            if suite.is_feasible(&x) {
                states.push(x);
            }
        }
    }
    suite.initial_states = states;
    suite
}

fn round_grid(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Sampling time of the aircraft suite, seconds.
pub const CESSNA_SAMPLE_TIME: f64 = 0.25;

/// Continuous-time longitudinal dynamics of a light aircraft at cruise:
/// states (angle of attack, pitch, pitch rate, altitude), input elevator
/// angle, outputs (pitch, altitude).
fn cessna_continuous() -> (DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            -1.2822, 0.0, 0.98, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            -5.4293, 0.0, -1.8366, 0.0, //
            -128.2, 128.2, 0.0, 0.0,
        ],
    );
    let b = DMatrix::from_column_slice(4, 1, &[-0.3, 0.0, -17.0, 0.0]);
    (a, b)
}

/// Zero-order-hold discretization through the exponential of the augmented
/// matrix `[[A, B], [0, 0]]·T`.
pub fn zoh(a: &DMatrix<f64>, b: &DMatrix<f64>, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (nx, nu) = (a.nrows(), b.ncols());
    let mut m = DMatrix::zeros(nx + nu, nx + nu);
    m.view_mut((0, 0), (nx, nx)).copy_from(&(a * t));
    m.view_mut((0, nx), (nx, nu)).copy_from(&(b * t));
    let e = m.exp();
    (
        e.view((0, 0), (nx, nx)).into_owned(),
        e.view((0, nx), (nx, nu)).into_owned(),
    )
}

/// Dual-Hessian curvature bound used for the aircraft suite (the published
/// value for the original instance).
pub const CESSNA_L_DH: f64 = 5e-7;

/// Stand-in aircraft suite: 4 states, 1 input, 2 outputs, `T = 0.25 s`,
/// `Q = I`, `R = 10`, `N = 10`; elevator `±15°`, elevator rate `±30°/s`,
/// pitch `±30°`. The 30 initial states are altitude offsets spread evenly
/// over `(0, 60]` metres with the other states at rest.
pub fn cessna_benchmark() -> BenchmarkSuite {
    let (ac, bc) = cessna_continuous();
    let (a, b) = zoh(&ac, &bc, CESSNA_SAMPLE_TIME);
    let c = DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    let model = LtiModel::new(a, b, c, DMatrix::zeros(2, 1)).expect("aircraft model dimensions");
    let deg = std::f64::consts::PI / 180.0;
    let pitch = 30.0 * deg;
    let config = MpcConfig {
        horizon: 10,
        q: DMatrix::identity(4, 4),
        r: DMatrix::from_element(1, 1, 10.0),
        u_bounds: Some(BoxBounds::symmetric(DVector::from_element(1, 15.0 * deg))),
        x_bounds: None,
        y_bounds: Some(BoxBounds::new(
            DVector::from_vec(vec![-pitch, f64::NEG_INFINITY]),
            DVector::from_vec(vec![pitch, f64::INFINITY]),
        )),
        du_bounds: Some(BoxBounds::symmetric(DVector::from_element(
            1,
            30.0 * deg * CESSNA_SAMPLE_TIME,
        ))),
    };
    let reference = PublishedValues {
        m_d: Some(1.1394e-4),
        eta_d: Some(2.6e-2),
        l_dh: Some(CESSNA_L_DH),
        notes: vec![
            "original aircraft matrices are not reproduced; textbook cruise model used".into(),
            "published trim altitude recorded verbatim: 5000 km".into(),
        ],
    };
    let states = (1..=30)
        .map(|i| DVector::from_vec(vec![0.0, 0.0, 0.0, 2.0 * i as f64]))
        .collect();
    BenchmarkSuite::new("cessna", model, config, states, 11, CESSNA_L_DH, reference)
        .expect("aircraft suite")
}
