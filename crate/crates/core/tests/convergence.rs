//! Long-horizon convergence behavior: the partial-sum bounds on
//! seed-averaged accelerated runs and the per-iterate residual envelope.

use blocksolve_core::blockcore::BlockDistribution;
use blocksolve_core::checks::fixtures;
use blocksolve_core::diagnostics::{summable_checks, SummableInputs};
use blocksolve_core::runner::{run_arcog, seed_mean, ArcogRunSpec, ArcogVariant, RunOptions};
use blocksolve_core::solvers::{arcog_constants, ArcogSchedule};
use blocksolve_core::trace::RunTrace;

#[test]
fn summable_bounds_hold_on_seed_averages() {
    let n = 8;
    let op = fixtures::separable_cocoercive(2222, n, 5, 0.15, 1.2);
    let dist = BlockDistribution::uniform(n).unwrap();
    let nu = 4.0;
    let schedule = ArcogSchedule::new(nu).unwrap();
    let beta_bar = op.cocoercivity().unwrap().to_vec();
    let beta: Vec<f64> = beta_bar.iter().map(|b| 0.9 * b).collect();
    let omega = beta
        .iter()
        .zip(dist.probs())
        .map(|(&b, &p)| b * p)
        .fold(f64::INFINITY, f64::min);
    let constants = arcog_constants(nu, omega, &beta, &beta_bar, &dist).unwrap();
    let x_star = op.solution().unwrap();
    let x0 = fixtures::offset_start(&op, 3, 1.0);
    let dist0_sq = x0.dist_sq(&x_star);

    let spec = ArcogRunSpec {
        schedule,
        omega,
        variant: ArcogVariant::Direct,
        beta: Some(&beta),
        beta_bar: Some(&beta_bar),
    };
    let k_max = 10_000usize;
    let traces: Vec<RunTrace> = (0..20)
        .map(|s| {
            let mut opts = RunOptions::new(k_max, 5000 + s);
            opts.diagnostics.record_extras = true;
            run_arcog(&op, &x0, Some(&x_star), &spec, &dist, &opts).unwrap()
        })
        .collect();

    let res_sq = seed_mean(&traces, |r| r.res_sq).unwrap();
    let step_sq = seed_mean(&traces, |r| r.step_sq).unwrap();
    let mut combo_sq = vec![0.0; k_max + 1];
    let mut blockdiff = vec![0.0; k_max + 1];
    for trace in &traces {
        let extras = trace.extras.as_ref().unwrap();
        for (m, v) in combo_sq.iter_mut().zip(&extras.combo_sq) {
            *m += v / traces.len() as f64;
        }
        for (m, v) in blockdiff.iter_mut().zip(&extras.blockdiff_weighted_sq) {
            *m += v / traces.len() as f64;
        }
    }
    let inputs = SummableInputs {
        res_sq,
        step_sq,
        combo_sq,
        blockdiff_weighted_sq: blockdiff,
    };
    let report = summable_checks(&inputs, nu, omega, &constants, dist0_sq, 1.2);
    assert!(
        report.pass(),
        "combo {:?}, step {:?}, residual {:?}, blockdiff {:?}",
        report.weighted_combo,
        report.weighted_step,
        report.weighted_residual,
        report.weighted_blockdiff
    );
    // The bounds must not be trivially slack by construction: every
    // accumulated left side is strictly positive.
    assert!(report.weighted_combo.lhs > 0.0);
    assert!(report.weighted_step.lhs > 0.0);
    assert!(report.weighted_residual.lhs > 0.0);
    assert!(report.weighted_blockdiff.lhs > 0.0);
}

#[test]
fn accelerated_solver_on_drs_zero_recovers_inclusion_solution() {
    use blocksolve_core::operators::BlockOp;
    use blocksolve_core::splitting::{replicate, DrsOperator};

    let problem = fixtures::affine_split(2424, 5, 4);
    let n = problem.num_users();
    let beta = 1.0;
    let dist = BlockDistribution::uniform(n).unwrap();
    let schedule = ArcogSchedule::new(4.0).unwrap();
    let omega = beta * dist.p_min();
    let drs = DrsOperator::new(&problem, beta).unwrap();

    let u0 = replicate(&vec![0.0; problem.dim()], n).unwrap();
    let mut cur = u0.clone();
    let mut prev = u0;
    let mut stream = blocksolve_core::blockcore::IndexStream::new(99);
    for k in 0..4000i64 {
        let i = stream.next_block(&dist);
        let next = blocksolve_core::solvers::arcog_step_direct(
            &cur,
            &prev,
            &drs,
            &schedule.at(k),
            omega,
            &dist,
            i,
        )
        .unwrap();
        prev = cur;
        cur = next;
    }
    // Residual zero found; the consensus resolvent of it solves the
    // inclusion.
    assert!(drs.eval_full(&cur).norm_sq().sqrt() < 1e-6);
    let u_hat = drs.u_hat(&cur).unwrap();
    let x_star = problem.solution().unwrap();
    let err: f64 = u_hat
        .iter()
        .zip(&x_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!(
        err < 1e-6,
        "resolvent output is {err} away from the solution"
    );
}

#[test]
fn per_iterate_envelope_holds_on_seed_average() {
    let n = 8;
    let op = fixtures::separable_cocoercive(2323, n, 4, 0.2, 1.0);
    let dist = BlockDistribution::uniform(n).unwrap();
    let nu = 4.0;
    let schedule = ArcogSchedule::new(nu).unwrap();
    let beta_bar = op.cocoercivity().unwrap().to_vec();
    let beta: Vec<f64> = beta_bar.iter().map(|b| 0.9 * b).collect();
    let omega = beta
        .iter()
        .zip(dist.probs())
        .map(|(&b, &p)| b * p)
        .fold(f64::INFINITY, f64::min);
    let constants = arcog_constants(nu, omega, &beta, &beta_bar, &dist).unwrap();
    let x_star = op.solution().unwrap();
    let x0 = fixtures::offset_start(&op, 9, 1.0);
    let dist0_sq = x0.dist_sq(&x_star);

    let spec = ArcogRunSpec {
        schedule,
        omega,
        variant: ArcogVariant::Direct,
        beta: Some(&beta),
        beta_bar: Some(&beta_bar),
    };
    let traces: Vec<RunTrace> = (0..20)
        .map(|s| {
            run_arcog(
                &op,
                &x0,
                Some(&x_star),
                &spec,
                &dist,
                &RunOptions::new(3000, 100 + s),
            )
            .unwrap()
        })
        .collect();
    let mean_res = seed_mean(&traces, |r| r.res_sq).unwrap();
    for (k, &res) in mean_res.iter().enumerate() {
        let envelope = constants.residual_envelope(omega, nu, dist0_sq, k) * 1.2;
        assert!(
            res <= envelope,
            "residual {res} above envelope {envelope} at k={k}"
        );
    }
}
