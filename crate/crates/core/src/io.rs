//! JSON problem/model files and CSV traces.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condense::{BoxBounds, CondenseError, LtiModel, MpcConfig};
use crate::dfg::DfgTraceRow;
use crate::pdip::PdipTraceRow;
use crate::qp::{CondensedQp, QpError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Condense(#[from] CondenseError),
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

fn from_rows(
    name: &str,
    rows: &[Vec<f64>],
    ncols_if_empty: usize,
) -> Result<DMatrix<f64>, IoError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(ncols_if_empty, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(IoError::Shape(format!("{name}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Problem file: row-major nested arrays plus dimensions. `x_t` is the state
/// the problem is to be solved for; it defaults to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpFile {
    #[serde(rename = "H")]
    pub hess: Vec<Vec<f64>>,
    #[serde(rename = "h")]
    pub lin_map: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    pub cons: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    pub cons_state: Vec<Vec<f64>>,
    #[serde(rename = "g")]
    pub cons_offset: Vec<f64>,
    pub n: usize,
    pub m: usize,
    pub n_x: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_t: Option<Vec<f64>>,
}

impl QpFile {
    pub fn from_problem(qp: &CondensedQp, x_t: Option<&DVector<f64>>) -> Self {
        Self {
            hess: to_rows(qp.hess()),
            lin_map: to_rows(qp.lin_map()),
            cons: to_rows(qp.cons()),
            cons_state: to_rows(qp.cons_state()),
            cons_offset: qp.cons_offset().iter().cloned().collect(),
            n: qp.n(),
            m: qp.m(),
            n_x: qp.n_x(),
            x_t: x_t.map(|x| x.iter().cloned().collect()),
        }
    }

    pub fn to_problem(&self) -> Result<(CondensedQp, DVector<f64>), IoError> {
        let hess = from_rows("H", &self.hess, self.n)?;
        let lin_map = from_rows("h", &self.lin_map, self.n_x)?;
        let cons = from_rows("G", &self.cons, self.n)?;
        let cons_state = from_rows("E", &self.cons_state, self.n_x)?;
        let checks = [
            ("H rows", hess.nrows(), self.n),
            ("h columns", lin_map.ncols(), self.n_x),
            ("G rows", cons.nrows(), self.m),
            ("g length", self.cons_offset.len(), self.m),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(IoError::Shape(format!("{what} is {got}, declared {want}")));
            }
        }
        let qp = CondensedQp::new(
            hess,
            lin_map,
            cons,
            cons_state,
            DVector::from_column_slice(&self.cons_offset),
        )?;
        let x_t = match &self.x_t {
            Some(x) => DVector::from_column_slice(x),
            None => DVector::zeros(self.n_x),
        };
        if x_t.len() != self.n_x {
            return Err(IoError::Shape(format!(
                "x_t has length {}, declared n_x = {}",
                x_t.len(),
                self.n_x
            )));
        }
        Ok((qp, x_t))
    }
}

/// Model file. Bounds are optional; `null` entries inside a bound vector mean
/// that component is unbounded on that side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_min: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_max: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_min: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_min: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_max: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub du_min: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub du_max: Option<Vec<Option<f64>>>,
}

fn bound_vec(v: &[Option<f64>], missing: f64) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().map(|x| x.unwrap_or(missing)))
}

fn to_bounds(
    lo: &Option<Vec<Option<f64>>>,
    hi: &Option<Vec<Option<f64>>>,
    dim: usize,
) -> Option<BoxBounds> {
    if lo.is_none() && hi.is_none() {
        return None;
    }
    let lower = lo
        .as_ref()
        .map(|v| bound_vec(v, f64::NEG_INFINITY))
        .unwrap_or_else(|| DVector::from_element(dim, f64::NEG_INFINITY));
    let upper = hi
        .as_ref()
        .map(|v| bound_vec(v, f64::INFINITY))
        .unwrap_or_else(|| DVector::from_element(dim, f64::INFINITY));
    Some(BoxBounds::new(lower, upper))
}

fn from_bounds(b: &Option<BoxBounds>) -> (Option<Vec<Option<f64>>>, Option<Vec<Option<f64>>>) {
    match b {
        None => (None, None),
        Some(b) => {
            let f = |v: &DVector<f64>| v.iter().map(|x| x.is_finite().then_some(*x)).collect();
            (Some(f(&b.lower)), Some(f(&b.upper)))
        }
    }
}

impl ModelFile {
    pub fn to_model(&self) -> Result<(LtiModel, MpcConfig), IoError> {
        let model = LtiModel::new(
            from_rows("A", &self.a, 0)?,
            from_rows("B", &self.b, 0)?,
            from_rows("C", &self.c, 0)?,
            from_rows("D", &self.d, 0)?,
        )?;
        let (nx, nu, ny) = (model.n_x(), model.n_u(), model.n_y());
        let cfg = MpcConfig {
            horizon: self.horizon,
            q: from_rows("Q", &self.q, nx)?,
            r: from_rows("R", &self.r, nu)?,
            u_bounds: to_bounds(&self.u_min, &self.u_max, nu),
            x_bounds: to_bounds(&self.x_min, &self.x_max, nx),
            y_bounds: to_bounds(&self.y_min, &self.y_max, ny),
            du_bounds: to_bounds(&self.du_min, &self.du_max, nu),
        };
        cfg.validate(&model)?;
        Ok((model, cfg))
    }

    pub fn from_model(model: &LtiModel, cfg: &MpcConfig) -> Self {
        let (u_min, u_max) = from_bounds(&cfg.u_bounds);
        let (x_min, x_max) = from_bounds(&cfg.x_bounds);
        let (y_min, y_max) = from_bounds(&cfg.y_bounds);
        let (du_min, du_max) = from_bounds(&cfg.du_bounds);
        Self {
            a: to_rows(&model.a),
            b: to_rows(&model.b),
            c: to_rows(&model.c),
            d: to_rows(&model.d),
            horizon: cfg.horizon,
            q: to_rows(&cfg.q),
            r: to_rows(&cfg.r),
            u_min,
            u_max,
            x_min,
            x_max,
            y_min,
            y_max,
            du_min,
            du_max,
        }
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Reads a state vector stored either as a bare array or as `{"x0": [...]}`.
pub fn read_state(path: &Path) -> Result<DVector<f64>, IoError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum State {
        Bare(Vec<f64>),
        Wrapped { x0: Vec<f64> },
    }
    let v = match read_json::<State>(path)? {
        State::Bare(v) => v,
        State::Wrapped { x0 } => x0,
    };
    Ok(DVector::from_vec(v))
}

pub const DFG_TRACE_HEADER: [&str; 5] = [
    "k",
    "d_lambda_hat",
    "primal_obj",
    "pos_violation_norm",
    "wall_ns",
];

pub const PDIP_TRACE_HEADER: [&str; 10] = [
    "k",
    "phase",
    "rho",
    "mu",
    "tau",
    "r_dual_norm",
    "r_pri_norm",
    "r_cent_norm",
    "obj",
    "wall_ns",
];

pub fn write_dfg_trace<W: Write>(out: W, rows: &[DfgTraceRow]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DFG_TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.d_lambda_hat.to_string(),
            r.primal_obj.to_string(),
            r.pos_violation_norm.to_string(),
            r.wall_ns.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pdip_trace<W: Write>(out: W, rows: &[PdipTraceRow]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PDIP_TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.phase.as_str().to_string(),
            r.rho.to_string(),
            r.mu.to_string(),
            r.tau.to_string(),
            r.r_dual_norm.to_string(),
            r.r_pri_norm.to_string(),
            r.r_cent_norm.to_string(),
            r.obj.to_string(),
            r.wall_ns.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Drops the `wall_ns` column from a trace CSV, for comparing runs.
pub fn strip_wall_clock(csv_text: &str) -> String {
    csv_text
        .lines()
        .map(|line| match line.rfind(',') {
            Some(i) => &line[..i],
            None => line,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn qp_file_round_trip() {
        let qp = CondensedQp::new(
            dmatrix![2.0, 0.5; 0.5, 1.0],
            dmatrix![1.0; 0.0],
            dmatrix![1.0, 0.0; 0.0, 1.0; -1.0, 0.0],
            dmatrix![0.5; 0.0; 0.0],
            DVector::from_element(3, -1.0),
        )
        .unwrap();
        let x = DVector::from_element(1, 0.25);
        let file = QpFile::from_problem(&qp, Some(&x));
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains("\"H\"") && text.contains("\"n_x\":1"));
        let back: QpFile = serde_json::from_str(&text).unwrap();
        let (qp2, x2) = back.to_problem().unwrap();
        assert_eq!(qp2.hess(), qp.hess());
        assert_eq!(qp2.cons_state(), qp.cons_state());
        assert_eq!(x2, x);
    }

    #[test]
    fn qp_file_declared_dimensions_checked() {
        let qp = CondensedQp::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DVector::from_element(2, -1.0),
        )
        .unwrap();
        let mut file = QpFile::from_problem(&qp, None);
        file.m = 3;
        assert!(matches!(file.to_problem(), Err(IoError::Shape(_))));
    }

    #[test]
    fn model_file_null_bounds_are_unbounded() {
        let text = r#"{"A": [[1.0]], "B": [[1.0]], "C": [[1.0],[2.0]], "D": [[0.0],[0.0]],
            "N": 3, "Q": [[1.0]], "R": [[1.0]],
            "y_min": [-1.0, null], "y_max": [1.0, null]}"#;
        let f: ModelFile = serde_json::from_str(text).unwrap();
        let (_, cfg) = f.to_model().unwrap();
        let y = cfg.y_bounds.unwrap();
        assert_eq!(y.upper[0], 1.0);
        assert!(y.upper[1].is_infinite());
        assert!(cfg.u_bounds.is_none());
    }

    #[test]
    fn strip_wall_clock_drops_last_column() {
        assert_eq!(strip_wall_clock("a,b,wall_ns\n1,2,99"), "a,b\n1,2");
    }
}
