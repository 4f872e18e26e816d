//! Problem data for the condensed QP
//!
//! ```text
//! minimize    ½ zᵀ H z + (h x)ᵀ z
//! subject to  G z + E x + g ≤ 0
//! ```
//!
//! together with the dual constants the fast-gradient phase and the switching
//! rule need, and the primal-dual iterate used by the interior-point phase.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative elementwise tolerance for the symmetry check on `H`.
pub const SYMMETRY_TOL: f64 = 1e-12;

const POWER_ITER_CAP: usize = 10_000;
const POWER_ITER_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("problem must have n >= 1 and m >= 1 (got n = {n}, m = {m})")]
    Empty { n: usize, m: usize },
    #[error("H is not symmetric: H[{row}][{col}] = {upper} but H[{col}][{row}] = {lower}")]
    Asymmetric {
        row: usize,
        col: usize,
        upper: f64,
        lower: f64,
    },
    #[error("H is not positive definite (Cholesky failed)")]
    NotPositiveDefinite,
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("L_dH must be positive and finite (got {0})")]
    BadCurvatureBound(f64),
    #[error("power iteration for ||G H^-1 G^T|| did not converge in {0} iterations")]
    PowerIteration(usize),
}

/// Condensed MPC problem data. Construct through [`CondensedQp::new`], which
/// validates and caches the Cholesky factor of `H`.
#[derive(Debug, Clone)]
pub struct CondensedQp {
    hess: DMatrix<f64>,
    lin_map: DMatrix<f64>,
    cons: DMatrix<f64>,
    cons_state: DMatrix<f64>,
    cons_offset: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `H⁻¹ Gᵀ`, used by the closed-form Lagrangian minimizer.
    hinv_gt: DMatrix<f64>,
}

impl CondensedQp {
    pub fn new(
        hess: DMatrix<f64>,
        lin_map: DMatrix<f64>,
        cons: DMatrix<f64>,
        cons_state: DMatrix<f64>,
        cons_offset: DVector<f64>,
    ) -> Result<Self, QpError> {
        let chol = validate(&hess, &lin_map, &cons, &cons_state, &cons_offset)?;
        let hinv_gt = chol.solve(&cons.transpose());
        Ok(Self {
            hess,
            lin_map,
            cons,
            cons_state,
            cons_offset,
            chol,
            hinv_gt,
        })
    }

    /// Decision dimension.
    pub fn n(&self) -> usize {
        self.hess.nrows()
    }

    /// Number of inequality rows.
    pub fn m(&self) -> usize {
        self.cons.nrows()
    }

    /// Parameter (state) dimension.
    pub fn n_x(&self) -> usize {
        self.lin_map.ncols()
    }

    pub fn hess(&self) -> &DMatrix<f64> {
        &self.hess
    }

    pub fn lin_map(&self) -> &DMatrix<f64> {
        &self.lin_map
    }

    pub fn cons(&self) -> &DMatrix<f64> {
        &self.cons
    }

    pub fn cons_state(&self) -> &DMatrix<f64> {
        &self.cons_state
    }

    pub fn cons_offset(&self) -> &DVector<f64> {
        &self.cons_offset
    }

    pub fn chol(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn hinv_gt(&self) -> &DMatrix<f64> {
        &self.hinv_gt
    }

    /// Bind the problem to a measured state.
    pub fn instance(&self, x_t: DVector<f64>) -> Result<QpInstance<'_>, QpError> {
        QpInstance::new(self, x_t)
    }
}

/// Checks every invariant of the problem data and returns the Cholesky factor
/// of `H` on success. The first violated invariant is reported.
pub fn validate(
    hess: &DMatrix<f64>,
    lin_map: &DMatrix<f64>,
    cons: &DMatrix<f64>,
    cons_state: &DMatrix<f64>,
    cons_offset: &DVector<f64>,
) -> Result<Cholesky<f64, Dyn>, QpError> {
    let n = hess.nrows();
    let m = cons.nrows();
    if n == 0 || m == 0 {
        return Err(QpError::Empty { n, m });
    }
    if hess.ncols() != n {
        return Err(QpError::Dimension(format!(
            "H is {}x{}, expected square",
            n,
            hess.ncols()
        )));
    }
    if lin_map.nrows() != n {
        return Err(QpError::Dimension(format!(
            "h has {} rows, expected n = {n}",
            lin_map.nrows()
        )));
    }
    let n_x = lin_map.ncols();
    if cons.ncols() != n {
        return Err(QpError::Dimension(format!(
            "G has {} columns, expected n = {n}",
            cons.ncols()
        )));
    }
    if cons_state.nrows() != m || cons_state.ncols() != n_x {
        return Err(QpError::Dimension(format!(
            "E is {}x{}, expected {m}x{n_x}",
            cons_state.nrows(),
            cons_state.ncols()
        )));
    }
    if cons_offset.len() != m {
        return Err(QpError::Dimension(format!(
            "g has length {}, expected m = {m}",
            cons_offset.len()
        )));
    }
    for (name, finite) in [
        ("H", hess.iter().all(|v| v.is_finite())),
        ("h", lin_map.iter().all(|v| v.is_finite())),
        ("G", cons.iter().all(|v| v.is_finite())),
        ("E", cons_state.iter().all(|v| v.is_finite())),
        ("g", cons_offset.iter().all(|v| v.is_finite())),
    ] {
        if !finite {
            return Err(QpError::NonFinite(name));
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (hess[(i, j)], hess[(j, i)]);
            let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
            if (a - b).abs() > SYMMETRY_TOL * scale {
                return Err(QpError::Asymmetric {
                    row: i,
                    col: j,
                    upper: a,
                    lower: b,
                });
            }
        }
    }
    Cholesky::new(hess.clone()).ok_or(QpError::NotPositiveDefinite)
}

/// A condensed QP bound to the current measured state `x_t`. The state
/// dependent terms `h x_t` and `E x_t + g` are evaluated once here.
#[derive(Debug, Clone)]
pub struct QpInstance<'a> {
    problem: &'a CondensedQp,
    x_t: DVector<f64>,
    lin: DVector<f64>,
    offset: DVector<f64>,
}

impl<'a> QpInstance<'a> {
    pub fn new(problem: &'a CondensedQp, x_t: DVector<f64>) -> Result<Self, QpError> {
        if x_t.len() != problem.n_x() {
            return Err(QpError::Dimension(format!(
                "x_t has length {}, expected n_x = {}",
                x_t.len(),
                problem.n_x()
            )));
        }
        let lin = problem.lin_map() * &x_t;
        let offset = problem.cons_state() * &x_t + problem.cons_offset();
        Ok(Self {
            problem,
            x_t,
            lin,
            offset,
        })
    }

    pub fn problem(&self) -> &'a CondensedQp {
        self.problem
    }

    pub fn x_t(&self) -> &DVector<f64> {
        &self.x_t
    }

    /// `h x_t`
    pub fn lin(&self) -> &DVector<f64> {
        &self.lin
    }

    /// `E x_t + g`
    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn n(&self) -> usize {
        self.problem.n()
    }

    pub fn m(&self) -> usize {
        self.problem.m()
    }

    /// `g(z) = G z + E x_t + g`
    pub fn eval_constraints(&self, z: &DVector<f64>) -> DVector<f64> {
        self.problem.cons() * z + &self.offset
    }

    /// `f₀(z) = ½ zᵀ H z + (h x_t)ᵀ z`
    pub fn eval_objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(self.problem.hess() * z)) + self.lin.dot(z)
    }

    /// Lagrangian minimizer `z(λ) = −H⁻¹(h x_t + Gᵀλ)`.
    pub fn lagrangian_minimizer(&self, lambda: &DVector<f64>) -> DVector<f64> {
        let mut z = self.problem.chol().solve(&self.lin);
        z.gemv(1.0, self.problem.hinv_gt(), lambda, 1.0);
        z.neg_mut();
        z
    }

    /// Dual function `d(λ) = min_z f₀(z) + λᵀ g(z)`, evaluated in closed form.
    pub fn dual_value(&self, lambda: &DVector<f64>) -> f64 {
        let z = self.lagrangian_minimizer(lambda);
        self.eval_objective(&z) + lambda.dot(&self.eval_constraints(&z))
    }

    /// Unconstrained minimizer `−H⁻¹ h x_t`.
    pub fn unconstrained_minimizer(&self) -> DVector<f64> {
        -self.problem.chol().solve(&self.lin)
    }

    /// `‖[g(z)]₊‖₂`
    pub fn violation(&self, z: &DVector<f64>) -> f64 {
        positive_part_norm(&self.eval_constraints(z))
    }
}

/// Elementwise `max(v, 0)`.
pub fn project_nonneg(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| x.max(0.0))
}

pub(crate) fn positive_part_norm(v: &DVector<f64>) -> f64 {
    v.iter()
        .map(|x| x.max(0.0))
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Constants governing the dual fast-gradient step and the switch rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualConstants {
    /// `‖G H⁻¹ Gᵀ‖₂`, Lipschitz constant of the dual gradient.
    pub l_d: f64,
    /// `‖G‖₂² / σ_max(H)`
    pub m_d: f64,
    /// `‖G‖₂² / σ_min(H)`
    pub big_m_d: f64,
    /// Chosen Lipschitz constant of the dual Hessian.
    pub l_dh: f64,
    /// Switching threshold `m_d² / L_dH`.
    pub eta_d: f64,
}

impl DualConstants {
    pub fn new(problem: &CondensedQp, l_dh: f64) -> Result<Self, QpError> {
        dual_constants(problem, l_dh)
    }

    /// Same constants with a different switching threshold. Only thresholds
    /// at or below `m_d² / L_dH` are meaningful.
    pub fn with_eta_d(mut self, eta_d: f64) -> Self {
        self.eta_d = eta_d;
        self
    }
}

pub fn dual_constants(problem: &CondensedQp, l_dh: f64) -> Result<DualConstants, QpError> {
    if !(l_dh > 0.0 && l_dh.is_finite()) {
        return Err(QpError::BadCurvatureBound(l_dh));
    }
    let l_d = dual_hessian_norm(problem)?;

    let eig = SymmetricEigen::new(problem.hess().clone());
    let sigma_max = eig.eigenvalues.max();
    let sigma_min = eig.eigenvalues.min();
    let g_norm = problem
        .cons()
        .clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    let g_sq = g_norm * g_norm;
    let m_d = g_sq / sigma_max;
    Ok(DualConstants {
        l_d,
        m_d,
        big_m_d: g_sq / sigma_min,
        l_dh,
        eta_d: m_d * m_d / l_dh,
    })
}

/// Largest eigenvalue of `G H⁻¹ Gᵀ` by power iteration. The product is never
/// formed: each matvec is `G (H⁻¹ (Gᵀ v))` through the cached factor.
pub fn dual_hessian_norm(problem: &CondensedQp) -> Result<f64, QpError> {
    let m = problem.m();
    let apply =
        |v: &DVector<f64>| problem.cons() * problem.chol().solve(&(problem.cons().tr_mul(v)));

    // Ones, slightly tilted so the start vector is not orthogonal to a
    // symmetric top eigenvector by construction.
    let mut v = DVector::from_fn(m, |i, _| 1.0 + (i as f64 + 1.0) / (m as f64 + 1.0) * 0.5);
    v /= v.norm();
    let mut w = apply(&v);
    if w.norm() == 0.0 {
        return Err(QpError::PowerIteration(0));
    }
    let mut theta = v.dot(&w);
    for it in 1..=POWER_ITER_CAP {
        let resid = (&w - theta * &v).norm();
        if resid <= POWER_ITER_TOL * theta.abs() {
            return Ok(theta);
        }
        let nrm = w.norm();
        if nrm == 0.0 {
            return Err(QpError::PowerIteration(it));
        }
        v = w / nrm;
        w = apply(&v);
        let next = v.dot(&w);
        // Stagnation at roundoff level: no further progress is possible.
        if (next - theta).abs() <= 4.0 * f64::EPSILON * next.abs()
            && (&w - next * &v).norm() <= 1e-7 * next.abs()
        {
            return Ok(next);
        }
        theta = next;
    }
    Err(QpError::PowerIteration(POWER_ITER_CAP))
}

/// Primal-dual iterate `(z, λ, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalDualPoint {
    pub z: DVector<f64>,
    pub lambda: DVector<f64>,
    pub s: DVector<f64>,
}

impl PrimalDualPoint {
    pub fn new(z: DVector<f64>, lambda: DVector<f64>, s: DVector<f64>) -> Self {
        Self { z, lambda, s }
    }

    /// `(s, λ) > 0` elementwise.
    pub fn is_strictly_positive(&self) -> bool {
        self.lambda.iter().all(|&l| l > 0.0) && self.s.iter().all(|&s| s > 0.0)
    }

    /// Average duality gap `sᵀλ / m`.
    pub fn mu(&self) -> f64 {
        self.s.dot(&self.lambda) / self.s.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use nalgebra::dvector;

    fn box_qp(hess: DMatrix<f64>) -> Result<CondensedQp, QpError> {
        let n = hess.nrows();
        let mut g = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            g[(i, i)] = 1.0;
            g[(n + i, i)] = -1.0;
        }
        CondensedQp::new(
            hess,
            DMatrix::zeros(n, n),
            g,
            DMatrix::zeros(2 * n, n),
            DVector::from_element(2 * n, -1.0),
        )
    }

    #[test]
    fn identity_box_is_valid() {
        assert!(box_qp(DMatrix::identity(2, 2)).is_ok());
    }

    #[test]
    fn asymmetric_hessian_rejected() {
        let err = box_qp(dmatrix![1.0, 2.0; 0.0, 1.0]).unwrap_err();
        assert!(
            matches!(err, QpError::Asymmetric { row: 0, col: 1, .. }),
            "{err}"
        );
    }

    #[test]
    fn indefinite_hessian_rejected() {
        let err = box_qp(dmatrix![1.0, 0.0; 0.0, -1.0]).unwrap_err();
        assert_eq!(err, QpError::NotPositiveDefinite);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = CondensedQp::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::zeros(3, 1),
            DVector::zeros(2),
        )
        .unwrap_err();
        assert!(matches!(err, QpError::Dimension(_)));
        let err = CondensedQp::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(0, 2),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
        )
        .unwrap_err();
        assert!(matches!(err, QpError::Empty { m: 0, .. }));
    }

    #[test]
    fn dual_constants_identity() {
        let qp = CondensedQp::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DVector::from_element(2, -1.0),
        )
        .unwrap();
        let c = dual_constants(&qp, 1.0).unwrap();
        for v in [c.l_d, c.m_d, c.big_m_d, c.eta_d] {
            assert!((v - 1.0).abs() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn dual_constants_scaled_hessian() {
        let qp = CondensedQp::new(
            DMatrix::identity(2, 2) * 2.0,
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DVector::from_element(2, -1.0),
        )
        .unwrap();
        let c = dual_constants(&qp, 1.0).unwrap();
        assert!((c.l_d - 0.5).abs() < 1e-12);
        assert!((c.m_d - 0.5).abs() < 1e-12);
        assert!((c.big_m_d - 0.5).abs() < 1e-12);
        assert!((c.eta_d - 0.25).abs() < 1e-12);
    }

    #[test]
    fn dual_constants_rejects_nonpositive_curvature_bound() {
        let qp = box_qp(DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(
            dual_constants(&qp, 0.0),
            Err(QpError::BadCurvatureBound(_))
        ));
    }

    #[test]
    fn power_iteration_fails_on_zero_constraints() {
        let qp = CondensedQp::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DVector::from_element(2, -1.0),
        )
        .unwrap();
        assert!(matches!(
            dual_hessian_norm(&qp),
            Err(QpError::PowerIteration(_))
        ));
    }

    #[test]
    fn constraint_and_objective_evaluation() {
        let qp = CondensedQp::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            dvector![-1.0, -1.0],
        )
        .unwrap();
        let inst = qp.instance(DVector::zeros(2)).unwrap();
        assert_eq!(
            inst.eval_constraints(&DVector::zeros(2)),
            dvector![-1.0, -1.0]
        );
        assert_eq!(inst.eval_objective(&dvector![3.0, 4.0]), 12.5);
        assert_eq!(inst.eval_objective(&DVector::zeros(2)), 0.0);

        let qp = CondensedQp::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
        )
        .unwrap();
        let inst = qp.instance(dvector![0.0, 1.0]).unwrap();
        assert_eq!(
            inst.eval_constraints(&dvector![1.0, 0.0]),
            dvector![1.0, 1.0]
        );
    }

    #[test]
    fn instance_rejects_wrong_state_length() {
        let qp = box_qp(DMatrix::identity(2, 2)).unwrap();
        assert!(qp.instance(DVector::zeros(3)).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_nonneg(&dvector![-1.0, 2.0]), dvector![0.0, 2.0]);
        assert_eq!(project_nonneg(&dvector![0.0, 0.0]), dvector![0.0, 0.0]);
    }

    #[test]
    fn mu_of_point() {
        let p = PrimalDualPoint::new(dvector![0.0], dvector![1.0, 3.0], dvector![2.0, 1.0]);
        assert_eq!(p.mu(), 2.5);
        assert!(p.is_strictly_positive());
    }
}
