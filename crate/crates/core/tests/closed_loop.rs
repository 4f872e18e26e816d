use hqp::bench::{closed_loop, solve_scenario, ClosedLoopStatus, StepSolver};
use hqp::bench::{planar_benchmark, Scenario};
use hqp::oracle::reference_oracle;
use nalgebra::DVector;

const STEPS: usize = 50;

fn picks(len: usize) -> [usize; 4] {
    [0, len / 3, 2 * len / 3, len - 1]
}

#[test]
fn planar_loop_drives_state_to_origin() {
    let suite = planar_benchmark();
    for i in picks(suite.initial_states.len()) {
        let x0 = &suite.initial_states[i];
        for solver in [StepSolver::Oracle, StepSolver::Scenario(Scenario::S3)] {
            let log = closed_loop(&suite, solver, x0, STEPS, 1e-6);
            assert_eq!(
                log.status,
                ClosedLoopStatus::Completed,
                "x{i} {solver:?}: {:?}",
                log.message
            );
            assert!(log.inputs_within_bounds, "x{i} {solver:?}");
            let norms = log.state_norms();
            assert!(
                norms[STEPS] <= 1e-3 * norms[0].max(1e-3),
                "x{i} {solver:?}: |x| {} -> {}",
                norms[0],
                norms[STEPS]
            );
        }
    }
}

#[test]
fn hybrid_inputs_track_oracle_along_trajectory() {
    let suite = planar_benchmark();
    let eps = 1e-10;
    for i in picks(suite.initial_states.len()) {
        let log = closed_loop(
            &suite,
            StepSolver::Oracle,
            &suite.initial_states[i],
            STEPS,
            eps,
        );
        assert_eq!(log.status, ClosedLoopStatus::Completed);
        let mut worst = 0.0f64;
        for x in &log.states[..STEPS] {
            let x = DVector::from_column_slice(x);
            let inst = suite.condensed.qp.instance(x).unwrap();
            let oracle = reference_oracle(&inst).unwrap();
            let run = solve_scenario(&inst, &suite.constants, Scenario::S3, eps, false).unwrap();
            assert!(run.report.converged(), "x{i}: {:?}", run.report.termination);
            worst = worst.max((run.report.z[0] - oracle.z[0]).abs());
        }
        assert!(worst <= 1e-7, "x{i}: worst first-input gap {worst:e}");
    }
}
