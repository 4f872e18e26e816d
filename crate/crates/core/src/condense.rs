//! Condensed formulation of linear regulation MPC.
//!
//! The predicted states and outputs are eliminated through the plant
//! recursion, leaving the stacked input sequence `z = (u_0, …, u_{N-1})` as the
//! only decision variable. Box bounds on inputs, states, outputs and input
//! increments become rows of `G z + E x + g ≤ 0`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qp::{CondensedQp, QpError};

#[derive(Debug, Error)]
pub enum CondenseError {
    #[error("model dimensions inconsistent: {0}")]
    Model(String),
    #[error("invalid MPC configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("initial state violates {count} state-only bound(s), first: {first:?}")]
    InitialState { count: usize, first: ConstraintRow },
}

/// Discrete LTI plant `x⁺ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LtiModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self, CondenseError> {
        let nx = a.nrows();
        if nx == 0 || a.ncols() != nx {
            return Err(CondenseError::Model(format!(
                "A is {}x{}, expected nonempty square",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != nx || b.ncols() == 0 {
            return Err(CondenseError::Model(format!(
                "B is {}x{}, expected {nx} rows and at least one column",
                b.nrows(),
                b.ncols()
            )));
        }
        if c.ncols() != nx {
            return Err(CondenseError::Model(format!(
                "C has {} columns, expected {nx}",
                c.ncols()
            )));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(CondenseError::Model(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    /// Rank of `[B, AB, …, A^{n_x-1}B]`. Diagnostic only.
    pub fn controllability_rank(&self) -> usize {
        let nx = self.n_x();
        let nu = self.n_u();
        let mut ctrb = DMatrix::zeros(nx, nx * nu);
        let mut blk = self.b.clone();
        for i in 0..nx {
            ctrb.view_mut((0, i * nu), (nx, nu)).copy_from(&blk);
            blk = &self.a * blk;
        }
        let sv = ctrb.singular_values();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let tol = smax * (nx.max(nx * nu) as f64) * f64::EPSILON;
        sv.iter().filter(|&&s| s > tol).count()
    }

    /// One simulation step.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

/// Elementwise box `lower ≤ v ≤ upper`. Infinite entries mean unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxBounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Self {
        Self { lower, upper }
    }

    /// `|v_i| ≤ limit` for every component.
    pub fn symmetric(limit: DVector<f64>) -> Self {
        Self {
            lower: -&limit,
            upper: limit,
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        v.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(x, (lo, hi))| *x >= lo - tol && *x <= hi + tol)
    }
}

/// Horizon, weights and constraint sets.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub u_bounds: Option<BoxBounds>,
    pub x_bounds: Option<BoxBounds>,
    pub y_bounds: Option<BoxBounds>,
    /// Bound on successive input differences `u_{k+1} − u_k` inside the horizon.
    pub du_bounds: Option<BoxBounds>,
}

impl MpcConfig {
    pub fn validate(&self, model: &LtiModel) -> Result<(), CondenseError> {
        let (nx, nu, ny) = (model.n_x(), model.n_u(), model.n_y());
        if self.horizon == 0 {
            return Err(CondenseError::Config("horizon must be >= 1".into()));
        }
        if self.q.shape() != (nx, nx) {
            return Err(CondenseError::Config(format!(
                "Q is {:?}, expected {nx}x{nx}",
                self.q.shape()
            )));
        }
        if self.r.shape() != (nu, nu) {
            return Err(CondenseError::Config(format!(
                "R is {:?}, expected {nu}x{nu}",
                self.r.shape()
            )));
        }
        check_symmetric("Q", &self.q)?;
        check_symmetric("R", &self.r)?;
        let q_min = SymmetricEigen::new(self.q.clone()).eigenvalues.min();
        let q_scale = self.q.amax().max(1.0);
        if q_min < -1e-12 * q_scale {
            return Err(CondenseError::Config(format!(
                "Q is not positive semidefinite (min eigenvalue {q_min:e})"
            )));
        }
        let r_min = SymmetricEigen::new(self.r.clone()).eigenvalues.min();
        if r_min <= 0.0 {
            return Err(CondenseError::Config(format!(
                "R is not positive definite (min eigenvalue {r_min:e})"
            )));
        }
        for (name, bounds, dim) in [
            ("u", &self.u_bounds, nu),
            ("x", &self.x_bounds, nx),
            ("y", &self.y_bounds, ny),
            ("du", &self.du_bounds, nu),
        ] {
            let Some(b) = bounds else { continue };
            if b.lower.len() != dim || b.upper.len() != dim {
                return Err(CondenseError::Config(format!(
                    "{name} bounds have length {}/{}, expected {dim}",
                    b.lower.len(),
                    b.upper.len()
                )));
            }
            for i in 0..dim {
                let (lo, hi) = (b.lower[i], b.upper[i]);
                if lo.is_nan() || hi.is_nan() || !(lo < 0.0 && 0.0 < hi) {
                    return Err(CondenseError::Config(format!(
                        "{name} bound {i} is [{lo}, {hi}]; the origin must be interior"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<(), CondenseError> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(CondenseError::Config(format!("{name} is not symmetric")));
    }
    Ok(())
}

/// Stacked prediction matrices: `x = A_N x₀ + B_N z`, `y = C_N x₀ + D_N z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrices {
    pub a_n: DMatrix<f64>,
    pub b_n: DMatrix<f64>,
    pub c_n: DMatrix<f64>,
    pub d_n: DMatrix<f64>,
}

/// Block `(i, j)` of `B_N` is `A^{i-j-1} B` for `i > j`. The output at stage
/// `N` has no feedthrough term since `u_N` is not a decision variable.
pub fn build_prediction(model: &LtiModel, horizon: usize) -> PredictionMatrices {
    let (nx, nu, ny) = (model.n_x(), model.n_u(), model.n_y());
    let n = horizon;

    let mut powers = Vec::with_capacity(n + 1);
    powers.push(DMatrix::<f64>::identity(nx, nx));
    for k in 1..=n {
        let next = &model.a * &powers[k - 1];
        powers.push(next);
    }
    let ab: Vec<DMatrix<f64>> = powers.iter().map(|p| p * &model.b).collect();

    let mut a_n = DMatrix::zeros((n + 1) * nx, nx);
    let mut b_n = DMatrix::zeros((n + 1) * nx, n * nu);
    for i in 0..=n {
        a_n.view_mut((i * nx, 0), (nx, nx)).copy_from(&powers[i]);
        for j in 0..i {
            b_n.view_mut((i * nx, j * nu), (nx, nu))
                .copy_from(&ab[i - j - 1]);
        }
    }

    let mut c_bar = DMatrix::zeros((n + 1) * ny, (n + 1) * nx);
    let mut d_bar = DMatrix::zeros((n + 1) * ny, n * nu);
    for i in 0..=n {
        c_bar
            .view_mut((i * ny, i * nx), (ny, nx))
            .copy_from(&model.c);
        if i < n {
            d_bar
                .view_mut((i * ny, i * nu), (ny, nu))
                .copy_from(&model.d);
        }
    }
    let c_n = &c_bar * &a_n;
    let d_n = &c_bar * &b_n + d_bar;
    PredictionMatrices { a_n, b_n, c_n, d_n }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    Input,
    State,
    Output,
    /// `u_{k+1} − u_k`; the stage is `k`.
    InputRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Upper,
    Lower,
}

/// Provenance of one scalar constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub signal: Signal,
    pub stage: usize,
    pub component: usize,
    pub side: Side,
}

/// A bound row that does not depend on `z` (e.g. on `x₀`). Kept out of `G`
/// and checked against the measured state instead.
#[derive(Debug, Clone)]
pub struct FixedRow {
    pub row: ConstraintRow,
    pub state_coeff: DVector<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone)]
pub struct Condensed {
    pub qp: CondensedQp,
    /// One entry per row of `G`.
    pub rows: Vec<ConstraintRow>,
    pub fixed_rows: Vec<FixedRow>,
    /// `A_Nᵀ Q̄ A_N`; the objective constant is `½ x₀ᵀ (A_Nᵀ Q̄ A_N) x₀`.
    pub const_quad: DMatrix<f64>,
    pub prediction: PredictionMatrices,
}

impl Condensed {
    pub fn constant_term(&self, x0: &DVector<f64>) -> f64 {
        0.5 * x0.dot(&(&self.const_quad * x0))
    }

    /// Fixed rows violated by `x0` (beyond `tol`).
    pub fn violated_fixed_rows(&self, x0: &DVector<f64>, tol: f64) -> Vec<ConstraintRow> {
        self.fixed_rows
            .iter()
            .filter(|f| f.state_coeff.dot(x0) + f.offset > tol)
            .map(|f| f.row)
            .collect()
    }

    pub fn check_initial_state(&self, x0: &DVector<f64>) -> Result<(), CondenseError> {
        let bad = self.violated_fixed_rows(x0, 0.0);
        match bad.first() {
            None => Ok(()),
            Some(&first) => Err(CondenseError::InitialState {
                count: bad.len(),
                first,
            }),
        }
    }
}

struct RowBuilder {
    g: Vec<Vec<f64>>,
    e: Vec<Vec<f64>>,
    off: Vec<f64>,
    rows: Vec<ConstraintRow>,
    fixed: Vec<FixedRow>,
}

impl RowBuilder {
    /// Adds the upper rows for every bounded component, then the lower rows.
    /// `v = map_x x₀ + map_z z` with one row per component and stage.
    fn push_box(
        &mut self,
        signal: Signal,
        bounds: &BoxBounds,
        map_z: &DMatrix<f64>,
        map_x: &DMatrix<f64>,
    ) {
        let dim = bounds.len();
        let stages = map_z.nrows() / dim;
        for side in [Side::Upper, Side::Lower] {
            let sign = if side == Side::Upper { 1.0 } else { -1.0 };
            for stage in 0..stages {
                for comp in 0..dim {
                    let limit = match side {
                        Side::Upper => bounds.upper[comp],
                        Side::Lower => bounds.lower[comp],
                    };
                    if !limit.is_finite() {
                        continue;
                    }
                    let r = stage * dim + comp;
                    let row = ConstraintRow {
                        signal,
                        stage,
                        component: comp,
                        side,
                    };
                    let gz: Vec<f64> = map_z.row(r).iter().map(|v| sign * v).collect();
                    let ex: Vec<f64> = map_x.row(r).iter().map(|v| sign * v).collect();
                    let offset = -sign * limit;
                    if gz.iter().all(|&v| v == 0.0) {
                        self.fixed.push(FixedRow {
                            row,
                            state_coeff: DVector::from_vec(ex),
                            offset,
                        });
                    } else {
                        self.g.push(gz);
                        self.e.push(ex);
                        self.off.push(offset);
                        self.rows.push(row);
                    }
                }
            }
        }
    }
}

/// Assembles the condensed QP. Terminal weight equals `Q`.
pub fn condense(model: &LtiModel, cfg: &MpcConfig) -> Result<Condensed, CondenseError> {
    cfg.validate(model)?;
    let (nx, nu) = (model.n_x(), model.n_u());
    let n = cfg.horizon;
    let pred = build_prediction(model, n);

    let mut q_bar = DMatrix::zeros((n + 1) * nx, (n + 1) * nx);
    for i in 0..=n {
        q_bar.view_mut((i * nx, i * nx), (nx, nx)).copy_from(&cfg.q);
    }
    let mut r_bar = DMatrix::zeros(n * nu, n * nu);
    for i in 0..n {
        r_bar.view_mut((i * nu, i * nu), (nu, nu)).copy_from(&cfg.r);
    }
    let qb = &q_bar * &pred.b_n;
    let mut hess = pred.b_n.tr_mul(&qb) + r_bar;
    // Exact symmetry; the product above is symmetric only up to roundoff.
    let sym = (&hess + hess.transpose()) * 0.5;
    hess = sym;
    let lin_map = qb.tr_mul(&pred.a_n);
    let const_quad = pred.a_n.tr_mul(&(&q_bar * &pred.a_n));

    let nz = n * nu;
    let mut rb = RowBuilder {
        g: Vec::new(),
        e: Vec::new(),
        off: Vec::new(),
        rows: Vec::new(),
        fixed: Vec::new(),
    };
    if let Some(b) = &cfg.u_bounds {
        let ident = DMatrix::identity(nz, nz);
        let zeros = DMatrix::zeros(nz, nx);
        rb.push_box(Signal::Input, b, &ident, &zeros);
    }
    if let Some(b) = &cfg.x_bounds {
        rb.push_box(Signal::State, b, &pred.b_n, &pred.a_n);
    }
    if let Some(b) = &cfg.y_bounds {
        rb.push_box(Signal::Output, b, &pred.d_n, &pred.c_n);
    }
    if let Some(b) = &cfg.du_bounds {
        if n >= 2 {
            let mut diff = DMatrix::zeros((n - 1) * nu, nz);
            for k in 0..n - 1 {
                for c in 0..nu {
                    diff[(k * nu + c, (k + 1) * nu + c)] = 1.0;
                    diff[(k * nu + c, k * nu + c)] = -1.0;
                }
            }
            let zeros = DMatrix::zeros((n - 1) * nu, nx);
            rb.push_box(Signal::InputRate, b, &diff, &zeros);
        }
    }

    let m = rb.g.len();
    if m == 0 {
        return Err(CondenseError::Config(
            "no bound depends on the input sequence; nothing to constrain".into(),
        ));
    }
    let g = DMatrix::from_fn(m, nz, |i, j| rb.g[i][j]);
    let e = DMatrix::from_fn(m, nx, |i, j| rb.e[i][j]);
    let off = DVector::from_vec(rb.off);
    let qp = CondensedQp::new(hess, lin_map, g, e, off)?;
    Ok(Condensed {
        qp,
        rows: rb.rows,
        fixed_rows: rb.fixed,
        const_quad,
        prediction: pred,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn scalar_integrator() -> LtiModel {
        LtiModel::new(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0], dmatrix![0.0]).unwrap()
    }

    #[test]
    fn scalar_integrator_prediction() {
        let p = build_prediction(&scalar_integrator(), 2);
        assert_eq!(p.a_n, dmatrix![1.0; 1.0; 1.0]);
        assert_eq!(p.b_n, dmatrix![0.0, 0.0; 1.0, 0.0; 1.0, 1.0]);
    }

    #[test]
    fn nilpotent_prediction_is_subdiagonal() {
        let model = LtiModel::new(
            DMatrix::zeros(2, 2),
            dmatrix![1.0; 2.0],
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        let p = build_prediction(&model, 4);
        for i in 0..=4 {
            for j in 0..4 {
                let blk = p.b_n.view((i * 2, j), (2, 1));
                if i == j + 1 {
                    assert_eq!(blk, dmatrix![1.0; 2.0]);
                } else {
                    assert!(blk.iter().all(|&v| v == 0.0), "block ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn scalar_unconstrained_expansion() {
        // ½(x₀² + u₀²) + ½x₁² with x₁ = x₀ + u₀ gives u₀² + x₀u₀ + const.
        let cfg = MpcConfig {
            horizon: 1,
            q: dmatrix![1.0],
            r: dmatrix![1.0],
            u_bounds: Some(BoxBounds::symmetric(dvector![10.0])),
            x_bounds: None,
            y_bounds: None,
            du_bounds: None,
        };
        let c = condense(&scalar_integrator(), &cfg).unwrap();
        assert_eq!(c.qp.hess(), &dmatrix![2.0]);
        assert_eq!(c.qp.lin_map(), &dmatrix![1.0]);
        assert_eq!(c.constant_term(&dvector![2.0]), 0.5 * 2.0 * 4.0);
    }

    #[test]
    fn input_box_stacking() {
        let cfg = MpcConfig {
            horizon: 2,
            q: dmatrix![1.0],
            r: dmatrix![1.0],
            u_bounds: Some(BoxBounds::symmetric(dvector![1.0])),
            x_bounds: None,
            y_bounds: None,
            du_bounds: None,
        };
        let c = condense(&scalar_integrator(), &cfg).unwrap();
        assert_eq!(
            c.qp.cons(),
            &dmatrix![1.0, 0.0; 0.0, 1.0; -1.0, 0.0; 0.0, -1.0]
        );
        assert!(c.qp.cons_state().iter().all(|&v| v == 0.0));
        assert_eq!(c.qp.cons_offset(), &DVector::from_element(4, -1.0));
        assert_eq!(
            c.rows[2],
            ConstraintRow {
                signal: Signal::Input,
                stage: 0,
                component: 0,
                side: Side::Lower
            }
        );
    }

    #[test]
    fn state_rows_on_x0_are_fixed() {
        let cfg = MpcConfig {
            horizon: 3,
            q: dmatrix![1.0],
            r: dmatrix![1.0],
            u_bounds: None,
            x_bounds: Some(BoxBounds::symmetric(dvector![2.0])),
            y_bounds: None,
            du_bounds: None,
        };
        let c = condense(&scalar_integrator(), &cfg).unwrap();
        assert_eq!(c.qp.m(), 6);
        assert_eq!(c.fixed_rows.len(), 2);
        assert!(c.fixed_rows.iter().all(|f| f.row.stage == 0));
        assert!(c.check_initial_state(&dvector![1.5]).is_ok());
        assert!(matches!(
            c.check_initial_state(&dvector![2.5]),
            Err(CondenseError::InitialState { count: 1, .. })
        ));
    }

    #[test]
    fn rate_rows_difference_successive_inputs() {
        let cfg = MpcConfig {
            horizon: 3,
            q: dmatrix![1.0],
            r: dmatrix![1.0],
            u_bounds: None,
            x_bounds: None,
            y_bounds: None,
            du_bounds: Some(BoxBounds::symmetric(dvector![0.5])),
        };
        let c = condense(&scalar_integrator(), &cfg).unwrap();
        assert_eq!(
            c.qp.cons(),
            &dmatrix![-1.0, 1.0, 0.0; 0.0, -1.0, 1.0; 1.0, -1.0, 0.0; 0.0, 1.0, -1.0]
        );
        assert_eq!(c.qp.cons_offset(), &DVector::from_element(4, -0.5));
    }

    #[test]
    fn infinite_bounds_are_skipped() {
        let model = LtiModel::new(
            DMatrix::identity(2, 2),
            dmatrix![0.0; 1.0],
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        let cfg = MpcConfig {
            horizon: 2,
            q: DMatrix::identity(2, 2),
            r: dmatrix![1.0],
            u_bounds: None,
            x_bounds: None,
            y_bounds: Some(BoxBounds::new(
                dvector![f64::NEG_INFINITY, -1.0],
                dvector![f64::INFINITY, 1.0],
            )),
            du_bounds: None,
        };
        let c = condense(&model, &cfg).unwrap();
        assert!(c.rows.iter().all(|r| r.component == 1));
    }

    #[test]
    fn config_validation_errors() {
        let model = scalar_integrator();
        let good = MpcConfig {
            horizon: 2,
            q: dmatrix![1.0],
            r: dmatrix![1.0],
            u_bounds: Some(BoxBounds::symmetric(dvector![1.0])),
            x_bounds: None,
            y_bounds: None,
            du_bounds: None,
        };
        assert!(good.validate(&model).is_ok());
        let mut bad = good.clone();
        bad.horizon = 0;
        assert!(bad.validate(&model).is_err());
        let mut bad = good.clone();
        bad.r = dmatrix![0.0];
        assert!(bad.validate(&model).is_err());
        let mut bad = good.clone();
        bad.q = dmatrix![-1.0];
        assert!(bad.validate(&model).is_err());
        let mut bad = good.clone();
        bad.u_bounds = Some(BoxBounds::new(dvector![0.5], dvector![1.0]));
        assert!(bad.validate(&model).is_err());
    }

    #[test]
    fn model_dimension_errors() {
        assert!(LtiModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(3, 1),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1)
        )
        .is_err());
        assert!(LtiModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2)
        )
        .is_err());
    }

    #[test]
    fn controllability_rank_diagnostic() {
        let model = LtiModel::new(
            dmatrix![1.2, 0.5; 0.0, 1.1],
            dmatrix![0.0; 1.0],
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        assert_eq!(model.controllability_rank(), 2);
        let model = LtiModel::new(
            dmatrix![1.0, 0.0; 0.0, 2.0],
            dmatrix![1.0; 0.0],
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        assert_eq!(model.controllability_rank(), 1);
    }
}
