//! Dense QP solvers for condensed linear MPC.
//!
//! Three solvers share one problem representation ([`qp::CondensedQp`]):
//!
//! * [`dfg`]: dual fast gradient with exact inner minimization,
//! * [`pdip`]: infeasible-start primal-dual interior point,
//! * [`hybrid`]: dual fast gradient until `‖[g(z)]₊‖₂ ≤ η_d`, then pure Newton
//!   interior-point steps from a hand-off point built from the dual output.
//!
//! [`condense`] builds problems from a discrete LTI plant, [`oracle`] provides
//! reference solutions, and [`bench`] runs the two benchmark suites.

pub mod bench;
pub mod condense;
pub mod dfg;
pub mod hybrid;
pub mod io;
pub mod oracle;
pub mod pdip;
pub mod qp;
pub mod report;

pub use condense::{condense, BoxBounds, Condensed, LtiModel, MpcConfig};
pub use hybrid::{hybrid_solve, HybridCaps, HybridOutcome, SwitchCertificate};
pub use pdip::{PdipConfig, Termination};
pub use qp::{dual_constants, CondensedQp, DualConstants, PrimalDualPoint, QpError, QpInstance};
pub use report::{SolveReport, SolverKind};
