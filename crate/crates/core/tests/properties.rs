mod common;

use hqp::dfg::{dfg_run, running_max, DfgOptions};
use hqp::hybrid::{handoff, hybrid_solve, ls_start, pdip_solve};
use hqp::oracle::reference_oracle;
use hqp::pdip::{newton_direction, newton_matrix, residual, Phase};
use hqp::qp::project_nonneg;
use hqp::{dual_constants, HybridCaps, PdipConfig};
use nalgebra::{dmatrix, dvector, DVector};
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 2usize..=12, 1usize..=24)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cholesky_reconstructs_hessian((seed, n, m) in dims()) {
        let (qp, _) = common::random_qp(&mut common::rng(seed), n, m);
        let l = qp.chol().l();
        let err = (&l * l.transpose() - qp.hess()).norm();
        prop_assert!(err <= 1e-10 * qp.hess().norm());
    }

    #[test]
    fn dual_constants_are_sandwiched((seed, n, m) in dims()) {
        let (qp, _) = common::random_qp(&mut common::rng(seed), n, m);
        let c = dual_constants(&qp, 1.0).unwrap();
        let tol = 1e-8 * c.l_d;
        prop_assert!(c.m_d <= c.l_d + tol, "m_d {} > L_d {}", c.m_d, c.l_d);
        prop_assert!(c.l_d <= c.big_m_d + tol, "L_d {} > M_d {}", c.l_d, c.big_m_d);
        prop_assert!((c.eta_d - c.m_d * c.m_d / c.l_dh).abs() <= 1e-14 * c.eta_d.max(1.0));
    }

    #[test]
    fn projection_is_idempotent_and_nonexpansive(
        a in prop::collection::vec(-1e3f64..1e3, 1..30),
        shift in -10.0f64..10.0,
    ) {
        let u = DVector::from_vec(a);
        let v = u.map(|x| x + shift * x.sin());
        let pu = project_nonneg(&u);
        prop_assert_eq!(project_nonneg(&pu), pu.clone());
        prop_assert!(pu.iter().all(|&x| x >= 0.0));
        prop_assert!((pu - project_nonneg(&v)).norm() <= (&u - &v).norm() + 1e-12);
    }

    #[test]
    fn block_elimination_matches_dense_solve((seed, n, m) in dims()) {
        let mut rng = common::rng(seed);
        let (qp, x) = common::random_qp(&mut rng, n, m);
        let inst = qp.instance(x).unwrap();
        let pt = common::random_interior_point(&mut rng, n, m);
        let res = residual(&inst, &pt, 0.1 * pt.mu());
        let dir = newton_direction(&inst, &pt, &res).unwrap();
        let mut rhs = DVector::zeros(n + 2 * m);
        rhs.rows_mut(0, n).copy_from(&(-&res.r_dual));
        rhs.rows_mut(n, m).copy_from(&(-&res.r_pri));
        rhs.rows_mut(n + m, m).copy_from(&(-&res.r_cent));
        let dense = newton_matrix(&inst, &pt).lu().solve(&rhs).unwrap();
        let ours = DVector::from_iterator(
            n + 2 * m,
            dir.dz.iter().chain(dir.dlambda.iter()).chain(dir.ds.iter()).cloned(),
        );
        prop_assert!((&ours - &dense).norm() <= 1e-8 * dense.norm().max(1e-12));
    }

    #[test]
    fn dual_values_stay_below_optimum((seed, n, m) in dims()) {
        let (qp, x) = common::random_qp(&mut common::rng(seed), n, m);
        let inst = qp.instance(x).unwrap();
        let opt = reference_oracle(&inst).unwrap();
        let consts = dual_constants(&qp, 1.0).unwrap();
        let out = dfg_run(
            &inst,
            &consts,
            DVector::zeros(m),
            &DfgOptions::gap(1e-9).with_max_iters(300).with_trace(true),
        );
        let envelope = running_max(out.trace.iter().map(|r| r.d_lambda_hat));
        prop_assert!(envelope.windows(2).all(|w| w[1] >= w[0]));
        let tol = 1e-9 * opt.objective.abs().max(1.0);
        prop_assert!(envelope.iter().all(|&d| d <= opt.objective + tol));
    }

    #[test]
    fn handoff_slacks_and_multipliers_are_positive((seed, n, m) in dims()) {
        let (qp, x) = common::random_qp(&mut common::rng(seed), n, m);
        let inst = qp.instance(x).unwrap();
        let consts = dual_constants(&qp, 1.0).unwrap();
        let out = dfg_run(
            &inst,
            &consts,
            DVector::zeros(m),
            &DfgOptions::switch(0.1 * consts.m_d).with_max_iters(5000),
        );
        let h = handoff(&inst, &out.z, &out.lambda);
        prop_assert!(h.point.is_strictly_positive());
        let g = inst.eval_constraints(&out.z);
        for i in 0..m {
            prop_assert!(h.point.s[i] >= g[i].abs());
            prop_assert!(h.point.lambda[i] >= out.lambda[i]);
        }
    }

    #[test]
    fn pure_phase_never_increases_mu((seed, n, m) in dims()) {
        let (qp, x) = common::random_qp(&mut common::rng(seed), n, m);
        let inst = qp.instance(x).unwrap();
        let consts = dual_constants(&qp, 1.0).unwrap();
        let consts = consts.with_eta_d(1e-2 * consts.m_d);
        let cfg = PdipConfig::default();
        let out = hybrid_solve(&inst, &consts, &cfg, HybridCaps::default(), true).unwrap();
        let trace = &out.report.phase2_trace;
        for w in trace.windows(2) {
            if w[0].phase == Phase::Pure && w[0].rho == 1.0 {
                prop_assert!(w[1].mu <= w[0].mu * (1.0 + 1e-9), "mu {} -> {}", w[0].mu, w[1].mu);
            }
        }
    }

    #[test]
    fn interior_point_agrees_with_oracle((seed, n, m) in dims()) {
        let (qp, x) = common::random_qp(&mut common::rng(seed), n, m);
        let inst = qp.instance(x).unwrap();
        let opt = reference_oracle(&inst).unwrap();
        let (init, _) = ls_start(&inst, 1.0);
        let cfg = PdipConfig::default().with_epsilon(1e-9);
        let rep = pdip_solve(&inst, init, &cfg, None, false);
        prop_assert!(rep.converged(), "{:?}", rep.termination);
        let err = (rep.final_obj - opt.objective).abs() / opt.objective.abs().max(1.0);
        prop_assert!(err <= 1e-6, "relative objective error {err:e}");
    }

    #[test]
    fn hybrid_solves_are_deterministic((seed, n, m) in dims()) {
        let (qp, x) = common::random_qp(&mut common::rng(seed), n, m);
        let inst = qp.instance(x).unwrap();
        let consts = dual_constants(&qp, 1.0).unwrap();
        let consts = consts.with_eta_d(1e-2 * consts.m_d);
        let cfg = PdipConfig::default();
        let a = hybrid_solve(&inst, &consts, &cfg, HybridCaps::default(), false).unwrap();
        let b = hybrid_solve(&inst, &consts, &cfg, HybridCaps::default(), false).unwrap();
        prop_assert_eq!(a.report.z, b.report.z);
        prop_assert_eq!(a.report.lambda, b.report.lambda);
        prop_assert_eq!(a.certificate, b.certificate);
    }
}

/// `(1/2m_d) ‖[g(z(λ))]₊‖²` vanishes whenever the inner minimizer is feasible,
/// even if `λ` overshoots `λ*`, so it does not bound the dual gap from above.
#[test]
fn projected_gradient_bound_misses_overshooting_multipliers() {
    // min ½z² s.t. 1 − z ≤ 0, so f* = ½ and λ* = 1.
    let qp = hqp::CondensedQp::new(
        dmatrix![1.0],
        dmatrix![0.0],
        dmatrix![-1.0],
        dmatrix![0.0],
        dvector![1.0],
    )
    .unwrap();
    let inst = qp.instance(dvector![0.0]).unwrap();
    let consts = dual_constants(&qp, 1.0).unwrap();
    let lambda = dvector![2.0];
    let z = inst.lagrangian_minimizer(&lambda);
    let bound = project_nonneg(&inst.eval_constraints(&z)).norm_squared() / (2.0 * consts.m_d);
    let gap = 0.5 - inst.dual_value(&lambda);
    assert_eq!(bound, 0.0);
    assert!((gap - 0.5).abs() < 1e-15);
}
