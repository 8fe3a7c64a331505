//! The acceptance check suite: every convergence guarantee the solvers are
//! designed to satisfy, verified at desk scale on deterministic fixtures.
//! The CLI `check` subcommand and the acceptance test target both run these.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::blockcore::WeightVector;
use crate::blockcore::{BlockDistribution, BlockPartition, BlockVector, IndexStream};
use crate::diagnostics::{
    arcog_descent_margin, arcog_lyapunov, fit_rate_slope, rcog_descent_margin, rcog_lyapunov,
    weighted_tail_trend,
};
use crate::error::{Error, Result};
use crate::fedsim::{run_federated, AcFedDrSim, FedOgSim, FederatedAlgorithm, FederatedConfig};
use crate::operators::{make_linear_weak_minty, make_separable_cocoercive, BlockOp, BlockOperator};
use crate::runner::{run_arcog, run_rcog, seed_mean, ArcogRunSpec, ArcogVariant, RunOptions};
use crate::solvers::{
    arcog_constants, arcog_step_direct, arcog_step_practical, derive_rcog_params, rcog_step,
    ArcogSchedule, PracticalState,
};
use crate::splitting::{
    consensus_resolvent, fbfs_star_check, lambda_range, replicate, CentralOperator, DrsOperator,
    FbfsOperator, SplitProblem,
};
use crate::trace::TraceRow;

/// Outcome of one acceptance check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub pass: bool,
    /// The worst margin / deviation / ratio observed, in the check's units.
    pub worst: f64,
    pub details: String,
    pub elapsed: Duration,
    /// The stated runtime budget for this check.
    pub budget: Duration,
}

impl CheckReport {
    pub fn line(&self) -> String {
        format!(
            "{} {:<34} worst={:>12.3e}  {:>7.2?}  {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.elapsed,
            self.details
        )
    }
}

/// Named check suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Lemmas,
    Solvers,
    Federated,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemmas" => Ok(Suite::Lemmas),
            "solvers" => Ok(Suite::Solvers),
            "federated" => Ok(Suite::Federated),
            "all" => Ok(Suite::All),
            other => Err(Error::Config(format!(
                "unknown suite '{other}' (expected lemmas, solvers, federated, or all)"
            ))),
        }
    }
}

/// Deterministic fixture builders shared by the suite, the benchmarks, and
/// the integration tests.
pub mod fixtures {
    use super::*;

    pub fn random_vec(stream: &mut IndexStream, len: usize, scale: f64) -> Vec<f64> {
        (0..len)
            .map(|_| scale * (2.0 * stream.next_uniform() - 1.0))
            .collect()
    }

    /// Random symmetric matrix with eigenvalues spread over `[lo, hi]`.
    pub fn random_spd(stream: &mut IndexStream, dim: usize, lo: f64, hi: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(dim, dim, |_, _| 2.0 * stream.next_uniform() - 1.0);
        let q = a.qr().q();
        let eigs = DVector::from_fn(dim, |i, _| lo + (hi - lo) * (i as f64 + 0.5) / dim as f64);
        &q * DMatrix::from_diagonal(&eigs) * q.transpose()
    }

    /// Separable co-coercive instance: `n` symmetric PD blocks of size
    /// `block_size` with eigenvalues in `[lo, hi]` and a random root.
    pub fn separable_cocoercive(
        seed: u64,
        n: usize,
        block_size: usize,
        lo: f64,
        hi: f64,
    ) -> BlockOperator {
        let mut stream = IndexStream::new(seed);
        let part = BlockPartition::uniform(n, block_size).expect("valid partition");
        let blocks: Vec<DMatrix<f64>> = (0..n)
            .map(|_| random_spd(&mut stream, block_size, lo, hi))
            .collect();
        let x_star = random_vec(&mut stream, n * block_size, 1.0);
        make_separable_cocoercive(part, blocks, x_star).expect("valid instance")
    }

    /// Coupled monotone linear instance: symmetric positive definite part
    /// plus a skew component, partitioned into `n` blocks.
    pub fn monotone_linear(seed: u64, n: usize, block_size: usize, skew: f64) -> BlockOperator {
        let mut stream = IndexStream::new(seed);
        let dim = n * block_size;
        let part = BlockPartition::uniform(n, block_size).expect("valid partition");
        let sym = random_spd(&mut stream, dim, 0.4, 1.6);
        let a = DMatrix::from_fn(dim, dim, |_, _| 2.0 * stream.next_uniform() - 1.0);
        let m = sym + skew * (&a - a.transpose());
        let x_star = random_vec(&mut stream, dim, 1.0);
        make_linear_weak_minty(part, m, x_star).expect("valid instance")
    }

    /// Affine monotone finite-sum inclusion with `n` users in dimension
    /// `dim` and a constructed solution.
    pub fn affine_split(seed: u64, n: usize, dim: usize) -> SplitProblem {
        let mut stream = IndexStream::new(seed);
        let ms: Vec<DMatrix<f64>> = (0..n)
            .map(|_| random_spd(&mut stream, dim, 0.2, 1.2))
            .collect();
        let bs: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_column_slice(&random_vec(&mut stream, dim, 0.5)))
            .collect();
        let central = random_spd(&mut stream, dim, 0.1, 0.8);
        let x_star = random_vec(&mut stream, dim, 1.0);
        SplitProblem::affine_with_solution(ms, bs, central, x_star).expect("valid instance")
    }

    /// A starting point at a fixed offset pattern from the instance root.
    pub fn offset_start(op: &BlockOperator, seed: u64, scale: f64) -> BlockVector {
        let mut stream = IndexStream::new(seed);
        let star = op.solution().expect("fixture has a solution");
        let data: Vec<f64> = star
            .as_slice()
            .iter()
            .map(|s| s + scale * (2.0 * stream.next_uniform() - 1.0))
            .collect();
        BlockVector::new(data, star.partition().clone()).expect("dimensions match")
    }
}

fn report(
    name: &'static str,
    start: Instant,
    budget_secs: u64,
    pass: bool,
    worst: f64,
    details: String,
) -> CheckReport {
    CheckReport {
        name,
        pass,
        worst,
        details,
        elapsed: start.elapsed(),
        budget: Duration::from_secs(budget_secs),
    }
}

/// Criterion 1: the practical kernel reproduces the direct kernel's iterates
/// through `x^k = z^k + c_k w^k` under an identical index stream.
pub fn check_practical_identity() -> CheckReport {
    let start = Instant::now();
    let op = fixtures::separable_cocoercive(101, 8, 5, 0.1, 1.0);
    let dist = BlockDistribution::uniform(8).expect("valid distribution");
    let schedule = ArcogSchedule::new(4.0).expect("nu > 3");
    let beta: Vec<f64> = op
        .cocoercivity()
        .expect("certified")
        .iter()
        .map(|b| 0.9 * b)
        .collect();
    let omega = beta
        .iter()
        .zip(dist.probs())
        .map(|(&b, &p)| b * p)
        .fold(f64::INFINITY, f64::min);
    let x0 = fixtures::offset_start(&op, 7, 1.0);

    let mut cur = x0.clone();
    let mut prev = x0.clone();
    let mut state = PracticalState::new(&x0);
    let mut stream = IndexStream::new(2024);
    let mut worst: f64 = 0.0;
    for k in 0..5000i64 {
        let i = stream.next_block(&dist);
        let next =
            arcog_step_direct(&cur, &prev, &op, &schedule.at(k), omega, &dist, i).expect("step");
        prev = cur;
        cur = next;
        arcog_step_practical(&mut state, &op, &schedule, omega, &dist, i).expect("step");
        let rebuilt = state.reconstruct();
        let dev = rebuilt.dist_sq(&cur).sqrt() / (1.0 + cur.norm_sq().sqrt());
        worst = worst.max(dev);
    }
    let pass = worst <= 1e-6;
    report(
        "practical_variant_identity",
        start,
        10,
        pass,
        worst,
        format!(
            "max relative deviation over 5000 steps (tol 1e-6), {} rebases",
            state.renorm_count()
        ),
    )
}

/// Criterion 2: the non-accelerated conditional descent inequality, checked
/// by exact enumeration at every iterate of a run on a coupled monotone
/// linear instance.
pub fn check_rcog_descent() -> CheckReport {
    let start = Instant::now();
    let op = fixtures::monotone_linear(202, 4, 2, 0.3);
    let dist = BlockDistribution::uniform(4).expect("valid distribution");
    let params =
        derive_rcog_params(1.0, 0.0, op.lipschitz().expect("certified"), &dist).expect("feasible");
    let x_star = op.solution().expect("fixture has a solution");
    let x0 = fixtures::offset_start(&op, 5, 2.0);
    let sigma = WeightVector::ones(4);

    let mut stream = IndexStream::new(404);
    let mut cur = x0.clone();
    let mut prev = x0;
    let mut worst = f64::NEG_INFINITY;
    let mut pass = true;
    for _ in 0..500 {
        let margin =
            rcog_descent_margin(&cur, &prev, &op, &params, &dist, &x_star).expect("margin");
        let g_prev = op.eval_full(&prev);
        let p_cur =
            rcog_lyapunov(&cur, &prev, &g_prev, &x_star, &params, &sigma).expect("potential");
        let rel = margin / (1.0 + p_cur.value);
        worst = worst.max(rel);
        if rel > 1e-12 {
            pass = false;
        }
        let i = stream.next_block(&dist);
        let next = rcog_step(&cur, &prev, &op, &params, &dist, i).expect("step");
        prev = cur;
        cur = next;
    }
    report(
        "rcog_exact_conditional_descent",
        start,
        5,
        pass,
        worst,
        "max of margin/(1+P_k) over 500 iterates (tol 1e-12)".into(),
    )
}

/// Criterion 3: the accelerated conditional descent inequality with unit
/// distance weight, checked by exact enumeration on a certified instance.
pub fn check_arcog_descent() -> CheckReport {
    let start = Instant::now();
    let op = fixtures::separable_cocoercive(303, 8, 3, 0.2, 1.5);
    let dist = BlockDistribution::uniform(8).expect("valid distribution");
    let schedule = ArcogSchedule::new(4.0).expect("nu > 3");
    let beta: Vec<f64> = op
        .cocoercivity()
        .expect("certified")
        .iter()
        .map(|b| 0.9 * b)
        .collect();
    let omega = beta
        .iter()
        .zip(dist.probs())
        .map(|(&b, &p)| b * p)
        .fold(f64::INFINITY, f64::min);
    let x_star = op.solution().expect("fixture has a solution");
    let x0 = fixtures::offset_start(&op, 11, 2.0);

    let mut stream = IndexStream::new(505);
    let mut cur = x0.clone();
    let mut prev = x0;
    let mut worst = f64::NEG_INFINITY;
    let mut pass = true;
    for k in 0..500i64 {
        let margin =
            arcog_descent_margin(&cur, &prev, &op, &schedule, omega, &dist, &x_star, &beta, k)
                .expect("margin");
        let g_prev = op.eval_full(&prev);
        let p_cur = arcog_lyapunov(
            &cur,
            &prev,
            &g_prev,
            &x_star,
            &beta,
            omega,
            schedule.t(k),
            schedule.at(k - 1).eta,
            1.0,
        )
        .expect("potential");
        let rel = margin / (1.0 + p_cur.value);
        worst = worst.max(rel);
        if rel > 1e-12 {
            pass = false;
        }
        let i = stream.next_block(&dist);
        let next =
            arcog_step_direct(&cur, &prev, &op, &schedule.at(k), omega, &dist, i).expect("step");
        prev = cur;
        cur = next;
    }
    report(
        "arcog_exact_conditional_descent",
        start,
        10,
        pass,
        worst,
        "max of margin/(1+P_k) over 500 iterates (tol 1e-12)".into(),
    )
}

/// Criterion 4: the accelerated last-iterate rate: fitted log-log slope of
/// the seed-mean residual and the closed-form envelope at every index.
pub fn check_arcog_rate() -> CheckReport {
    let start = Instant::now();
    let n = 20;
    let op = fixtures::separable_cocoercive(404, n, 5, 0.25, 1.0);
    let dist = BlockDistribution::uniform(n).expect("valid distribution");
    let nu = 4.0;
    let schedule = ArcogSchedule::new(nu).expect("nu > 3");
    let beta_bar = op.cocoercivity().expect("certified").to_vec();
    let beta: Vec<f64> = beta_bar.iter().map(|b| 0.9 * b).collect();
    let omega = beta
        .iter()
        .zip(dist.probs())
        .map(|(&b, &p)| b * p)
        .fold(f64::INFINITY, f64::min);
    let constants = arcog_constants(nu, omega, &beta, &beta_bar, &dist).expect("feasible");
    let x_star = op.solution().expect("fixture has a solution");
    let x0 = fixtures::offset_start(&op, 21, 0.6);
    let dist0_sq = x0.dist_sq(&x_star);

    let k_max = 10_000usize;
    let spec = ArcogRunSpec {
        schedule,
        omega,
        variant: ArcogVariant::Direct,
        beta: Some(&beta),
        beta_bar: Some(&beta_bar),
    };
    let traces: Vec<_> = (0..20)
        .map(|s| run_rcog_compatible_arcog(&op, &x0, &x_star, &spec, &dist, k_max, 9000 + s))
        .collect::<Result<_>>()
        .expect("runs");
    let mean_res = seed_mean(&traces, |row: &TraceRow| row.res_sq).expect("aligned traces");

    let fit = fit_rate_slope(&mean_res, 100, k_max).expect("positive window");
    let slope_pass = fit.slope <= -1.7;

    let mut worst_ratio: f64 = 0.0;
    for (k, &res) in mean_res.iter().enumerate() {
        let envelope = constants.residual_envelope(omega, nu, dist0_sq, k) * 1.2;
        worst_ratio = worst_ratio.max(res / envelope);
    }
    let bound_pass = worst_ratio <= 1.0;
    let pass = slope_pass && bound_pass;
    report(
        "arcog_rate",
        start,
        60,
        pass,
        fit.slope,
        format!(
            "fitted slope {:.3} (need <= -1.7); worst residual/envelope ratio {:.3e} (need <= 1)",
            fit.slope, worst_ratio
        ),
    )
}

fn run_rcog_compatible_arcog(
    op: &BlockOperator,
    x0: &BlockVector,
    x_star: &BlockVector,
    spec: &ArcogRunSpec,
    dist: &BlockDistribution,
    k_max: usize,
    seed: u64,
) -> Result<crate::trace::RunTrace> {
    run_arcog(
        op,
        x0,
        Some(x_star),
        spec,
        dist,
        &RunOptions::new(k_max, seed),
    )
}

/// Criterion 5: the non-accelerated ergodic bound
/// `avg_k E||G x^k||^2 <= 5 ||x^0 - x*||^2 / (2 psi (K+1))`.
pub fn check_rcog_ergodic() -> CheckReport {
    let start = Instant::now();
    let op = fixtures::monotone_linear(202, 4, 2, 0.3);
    let dist = BlockDistribution::uniform(4).expect("valid distribution");
    let params =
        derive_rcog_params(1.0, 0.0, op.lipschitz().expect("certified"), &dist).expect("feasible");
    let x_star = op.solution().expect("fixture has a solution");
    let x0 = fixtures::offset_start(&op, 5, 2.0);
    let k_max = 2000usize;

    let mut total = 0.0;
    for seed in 0..100u64 {
        let trace = run_rcog(
            &op,
            &x0,
            None,
            &params,
            &dist,
            &RunOptions::new(k_max, seed),
        )
        .expect("run");
        let avg: f64 = trace.rows.iter().map(|r| r.res_sq).sum::<f64>() / trace.rows.len() as f64;
        total += avg;
    }
    let seed_mean_avg = total / 100.0;
    let bound = 5.0 * x0.dist_sq(&x_star) / (2.0 * params.psi * (k_max as f64 + 1.0));
    let ratio = seed_mean_avg / (bound * 1.2);
    let pass = ratio <= 1.0;
    report(
        "rcog_ergodic_bound",
        start,
        60,
        pass,
        ratio,
        format!(
            "100-seed ergodic mean {seed_mean_avg:.3e} vs 1.2x bound {:.3e}",
            bound * 1.2
        ),
    )
}

/// Criterion 6: the consensus resolvent against a brute-force dense solve of
/// the full lifted system in all `2 n p` unknowns.
pub fn check_consensus_resolvent_on(problem: &SplitProblem, seed: u64) -> CheckReport {
    let start = Instant::now();
    let n = problem.num_users();
    let p = problem.dim();
    let beta = 0.9;
    let (q, offset) = match problem.central() {
        CentralOperator::Affine { m, b } => (m.clone(), b.clone()),
        _ => {
            return report(
                "consensus_resolvent_bruteforce",
                start,
                5,
                false,
                f64::INFINITY,
                "fixture central operator must be affine for the brute-force oracle".into(),
            )
        }
    };
    // Unknowns stacked as [u_tilde_1..u_tilde_n, s_1..s_n].
    let dim = 2 * n * p;
    let mut system = DMatrix::<f64>::zeros(dim, dim);
    let u_idx = |i: usize, j: usize| i * p + j;
    let s_idx = |i: usize, j: usize| n * p + i * p + j;
    // Row blocks 0..n: resolvent relations.
    for j in 0..p {
        // n beta B u_1 + beta s_1 + u_1 = u_1_input
        for l in 0..p {
            system[(u_idx(0, j), u_idx(0, l))] += n as f64 * beta * q[(j, l)];
        }
        system[(u_idx(0, j), u_idx(0, j))] += 1.0;
        system[(u_idx(0, j), s_idx(0, j))] += beta;
        for i in 1..n {
            system[(u_idx(i, j), s_idx(i, j))] += beta;
            system[(u_idx(i, j), u_idx(i, j))] += 1.0;
        }
    }
    // Row blocks n..2n-1: consensus u_i = u_1.
    for i in 1..n {
        for j in 0..p {
            let row = s_idx(i - 1, j);
            system[(row, u_idx(i, j))] += 1.0;
            system[(row, u_idx(0, j))] -= 1.0;
        }
    }
    // Final row block: sum_i s_i = 0.
    for j in 0..p {
        let row = s_idx(n - 1, j);
        for i in 0..n {
            system[(row, s_idx(i, j))] += 1.0;
        }
    }
    let lu = system.lu();

    let mut stream = IndexStream::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let u_data = fixtures::random_vec(&mut stream, n * p, 3.0);
        let u = BlockVector::new(u_data.clone(), problem.partition().expect("partition"))
            .expect("dimensions");
        let mut rhs = DVector::zeros(dim);
        for i in 0..n {
            for j in 0..p {
                rhs[u_idx(i, j)] = u_data[i * p + j];
                if i == 0 {
                    rhs[u_idx(i, j)] -= n as f64 * beta * offset[j];
                }
            }
        }
        let solved = match lu.solve(&rhs) {
            Some(sol) => sol,
            None => {
                return report(
                    "consensus_resolvent_bruteforce",
                    start,
                    5,
                    false,
                    f64::INFINITY,
                    "brute-force system is singular".into(),
                )
            }
        };
        let (u_hat, _) = match consensus_resolvent(&u, beta, problem) {
            Ok(v) => v,
            Err(e) => {
                return report(
                    "consensus_resolvent_bruteforce",
                    start,
                    5,
                    false,
                    f64::INFINITY,
                    format!("consensus resolvent failed: {e}"),
                )
            }
        };
        let mut err: f64 = 0.0;
        for j in 0..p {
            err = err.max((u_hat[j] - solved[u_idx(0, j)]).abs());
        }
        worst = worst.max(err);
    }
    let pass = worst <= 1e-8;
    report(
        "consensus_resolvent_bruteforce",
        start,
        5,
        pass,
        worst,
        "max deviation from the full lifted dense solve over 100 inputs (tol 1e-8)".into(),
    )
}

pub fn check_consensus_resolvent() -> CheckReport {
    let problem = fixtures::affine_split(606, 5, 6);
    check_consensus_resolvent_on(&problem, 707)
}

/// Criterion 7: forward-backward-forward residual properties: zero at the
/// constructed solution, the Lipschitz bound, and the star inequality.
pub fn check_fbfs_properties_on(problem: &SplitProblem, seed: u64) -> CheckReport {
    let start = Instant::now();
    let run = || -> Result<(f64, f64, f64, bool)> {
        let lipschitz = problem
            .certificates()
            .lipschitz
            .ok_or(Error::MissingCertificate("common Lipschitz constant"))?;
        let rho = problem.certificates().rho.unwrap_or(0.0);
        let range = lambda_range(lipschitz, rho)?;
        let lambda = range.midpoint();
        let ls = range.ls_at(lambda)?;
        let op = FbfsOperator::new(problem, lambda)?;
        let x_star = op.known_zero()?;
        let zero_residual = op.eval_full(&x_star).norm_sq().sqrt();
        let part = problem.partition()?;
        let np = part.dim();
        let mut stream = IndexStream::new(seed);
        let mut worst_ratio: f64 = 0.0;
        let mut worst_star = f64::INFINITY;
        let mut pass = zero_residual <= 1e-10 * (1.0 + x_star.norm_sq().sqrt());
        for _ in 0..10_000 {
            let x = BlockVector::new(fixtures::random_vec(&mut stream, np, 4.0), part.clone())?;
            let y = BlockVector::new(fixtures::random_vec(&mut stream, np, 4.0), part.clone())?;
            let sx = op.eval_full(&x);
            let sy = op.eval_full(&y);
            let ratio = sx.dist_sq(&sy).sqrt() / x.dist_sq(&y).sqrt();
            worst_ratio = worst_ratio.max(ratio);
            if ratio > ls * (1.0 + 1e-10) {
                pass = false;
            }
            let star = fbfs_star_check(&x, lambda, problem, &x_star)?;
            worst_star = worst_star.min(star.margin);
            if !star.pass {
                pass = false;
            }
        }
        Ok((zero_residual, worst_ratio / ls, worst_star, pass))
    };
    match run() {
        Ok((zero_residual, ratio, star, pass)) => report(
            "fbfs_properties",
            start,
            10,
            pass,
            star.min(-zero_residual),
            format!(
                "||Sx*|| = {zero_residual:.3e}; worst Lipschitz ratio/L_s = {ratio:.6}; worst star margin = {star:.3e} over 1e4 samples"
            ),
        ),
        Err(e) => report(
            "fbfs_properties",
            start,
            10,
            false,
            f64::INFINITY,
            format!("check failed to run: {e}"),
        ),
    }
}

pub fn check_fbfs_properties() -> CheckReport {
    let problem = fixtures::affine_split(808, 4, 4);
    check_fbfs_properties_on(&problem, 909)
}

/// Criterion 8: the Douglas-Rachford residual operator is `beta`-co-coercive
/// on sampled pairs of an affine monotone instance.
pub fn check_drs_cocoercivity_on(problem: &SplitProblem, seed: u64) -> CheckReport {
    let start = Instant::now();
    let beta = 1.0;
    let run = || -> Result<(f64, bool)> {
        let op = DrsOperator::new(problem, beta)?;
        let part = problem.partition()?;
        let np = part.dim();
        let mut stream = IndexStream::new(seed);
        let mut worst = f64::INFINITY;
        let mut pass = true;
        for _ in 0..10_000 {
            let u = BlockVector::new(fixtures::random_vec(&mut stream, np, 4.0), part.clone())?;
            let v = BlockVector::new(fixtures::random_vec(&mut stream, np, 4.0), part.clone())?;
            let gu = op.eval_full(&u);
            let gv = op.eval_full(&v);
            let mut inner = 0.0;
            let mut g_sq = 0.0;
            for j in 0..np {
                let gd = gu.as_slice()[j] - gv.as_slice()[j];
                inner += gd * (u.as_slice()[j] - v.as_slice()[j]);
                g_sq += gd * gd;
            }
            let scale = 1.0 + inner.abs() + beta * g_sq;
            let margin = (inner - beta * g_sq) / scale;
            worst = worst.min(margin);
            if margin < -1e-10 {
                pass = false;
            }
        }
        Ok((worst, pass))
    };
    match run() {
        Ok((worst, pass)) => report(
            "drs_cocoercivity",
            start,
            10,
            pass,
            worst,
            "worst scaled co-coercivity margin over 1e4 pairs (tol -1e-10)".into(),
        ),
        Err(e) => report(
            "drs_cocoercivity",
            start,
            10,
            false,
            f64::NEG_INFINITY,
            format!("check failed to run: {e}"),
        ),
    }
}

pub fn check_drs_cocoercivity() -> CheckReport {
    let problem = fixtures::affine_split(1010, 4, 5);
    check_drs_cocoercivity_on(&problem, 1111)
}

/// Extra lemmas-suite member: forward maps and resolvents of the same user
/// operators must agree (`J_{lambda A}(y + lambda A y) = y`).
pub fn check_resolvent_consistency_on(problem: &SplitProblem, seed: u64) -> CheckReport {
    let start = Instant::now();
    let mut stream = IndexStream::new(seed);
    let points: Vec<Vec<f64>> = (0..200)
        .map(|_| fixtures::random_vec(&mut stream, problem.dim(), 3.0))
        .collect();
    match problem.forward_resolvent_consistency(0.7, &points) {
        Ok(worst) => {
            let pass = worst <= 1e-10;
            report(
                "resolvent_forward_consistency",
                start,
                5,
                pass,
                worst,
                "worst relative round-trip residual over 200 points (tol 1e-10)".into(),
            )
        }
        Err(e) => report(
            "resolvent_forward_consistency",
            start,
            5,
            false,
            f64::INFINITY,
            format!("check failed to run: {e}"),
        ),
    }
}

pub fn check_resolvent_consistency() -> CheckReport {
    let problem = fixtures::affine_split(606, 5, 6);
    check_resolvent_consistency_on(&problem, 1212)
}

/// Criterion 9: the simulated optimistic-gradient rounds reproduce the
/// reference kernel applied to the residual operator on the product space.
pub fn check_fedog_fidelity() -> CheckReport {
    let start = Instant::now();
    let problem = fixtures::affine_split(1313, 6, 4);
    let n = problem.num_users();
    let dist = BlockDistribution::uniform(n).expect("valid distribution");
    let range =
        lambda_range(problem.certificates().lipschitz.expect("certified"), 0.0).expect("range");
    let lambda = range.midpoint();
    let ls = range.ls_at(lambda).expect("in range");
    let params = derive_rcog_params(1.0, 0.0, &vec![ls; n], &dist).expect("feasible");
    let x0 = vec![0.0; problem.dim()];
    let mut sim = FedOgSim::new(&problem, params, lambda, dist.clone(), &x0).expect("simulation");

    let fbfs = FbfsOperator::new(&problem, lambda).expect("operator");
    let x0_prod = replicate(&x0, n).expect("product point");
    let mut cur = x0_prod.clone();
    let mut prev = x0_prod;

    let mut stream = IndexStream::new(1414);
    let mut worst_dev: f64 = 0.0;
    let mut worst_drift: f64 = 0.0;
    for _ in 0..2000 {
        let i = stream.next_block(&dist);
        sim.round(i).expect("round");
        let next = rcog_step(&cur, &prev, &fbfs, &params, &dist, i).expect("step");
        prev = cur;
        cur = next;
        let sim_point = sim.product_point().expect("point");
        let dev = sim_point.dist_sq(&cur).sqrt() / (1.0 + cur.norm_sq().sqrt());
        worst_dev = worst_dev.max(dev);
        worst_drift = worst_drift.max(sim.mean_drift());
    }
    let pass = worst_dev <= 1e-10 && worst_drift <= 1e-12;
    report(
        "fedog_fidelity",
        start,
        10,
        pass,
        worst_dev,
        format!(
            "max iterate deviation {worst_dev:.3e} (tol 1e-10); max mean drift {worst_drift:.3e} (tol 1e-12) over 2000 rounds"
        ),
    )
}

/// Criterion 10: the accelerated Douglas-Rachford simulation reproduces the
/// accelerated kernel on the residual operator, and its seed-mean reflected
/// residual satisfies the closed-form envelope with fitted slope <= -1.7.
pub fn check_acfeddr_fidelity_rate() -> CheckReport {
    let start = Instant::now();
    let problem = fixtures::affine_split(1515, 6, 4);
    let n = problem.num_users();
    let dist = BlockDistribution::uniform(n).expect("valid distribution");
    let beta = 1.0;
    let nu = 4.0;
    let schedule = ArcogSchedule::new(nu).expect("nu > 3");
    let omega = beta * dist.p_min();
    let u0 = vec![0.0; problem.dim()];

    // Fidelity over 2000 rounds against the direct kernel.
    let mut sim =
        AcFedDrSim::new(&problem, schedule, omega, beta, dist.clone(), &u0).expect("simulation");
    let drs = DrsOperator::new(&problem, beta).expect("operator");
    let u0_prod = replicate(&u0, n).expect("product point");
    let mut cur = u0_prod.clone();
    let mut prev = u0_prod.clone();
    let mut stream = IndexStream::new(1616);
    let mut worst_dev: f64 = 0.0;
    for k in 0..2000i64 {
        let i = stream.next_block(&dist);
        sim.round(i).expect("round");
        let next =
            arcog_step_direct(&cur, &prev, &drs, &schedule.at(k), omega, &dist, i).expect("step");
        prev = cur;
        cur = next;
        let sim_point = sim.reconstruct_users().expect("reconstruction");
        let dev = sim_point.dist_sq(&cur).sqrt() / (1.0 + cur.norm_sq().sqrt());
        worst_dev = worst_dev.max(dev);
    }
    let fidelity_pass = worst_dev <= 1e-6;

    // Rate: 20-seed mean of the reflected-resolvent residual vs the
    // envelope `8 n beta^2 (C0 + 2 omega C2) / (omega^2 (k + nu)^2) D0^2`.
    let rounds = 5000usize;
    let betas = vec![beta; n];
    let constants = arcog_constants(nu, omega, &betas, &betas, &dist).expect("feasible");
    let u_star = drs.known_zero().expect("affine zero");
    let dist0_sq = u0_prod.dist_sq(&u_star);
    let mut mean_cert = vec![0.0; rounds + 1];
    for seed in 0..20u64 {
        let mut config = FederatedConfig::new(FederatedAlgorithm::AcFedDr, rounds, 8000 + seed);
        config.beta = Some(beta);
        config.nu = Some(nu);
        config.omega = Some(omega);
        config.x0 = Some(u0.clone());
        let outcome = run_federated(&problem, &config).expect("run");
        for (m, row) in mean_cert.iter_mut().zip(&outcome.trace.rows) {
            *m += row.certificate_residual / 20.0;
        }
    }
    let mut worst_ratio: f64 = 0.0;
    for (k, &cert) in mean_cert.iter().enumerate() {
        let t = k as f64 + nu;
        let envelope = 8.0 * n as f64 * beta * beta * (constants.c0 + 2.0 * omega * constants.c2)
            / (omega * omega * t * t)
            * dist0_sq
            * 1.2;
        worst_ratio = worst_ratio.max(cert / envelope);
    }
    let bound_pass = worst_ratio <= 1.0;
    let fit = fit_rate_slope(&mean_cert, 100, rounds).expect("positive window");
    let slope_pass = fit.slope <= -1.7;

    let pass = fidelity_pass && bound_pass && slope_pass;
    report(
        "acfeddr_fidelity_rate",
        start,
        120,
        pass,
        worst_dev,
        format!(
            "max fidelity deviation {worst_dev:.3e} (tol 1e-6); worst residual/envelope {worst_ratio:.3e} (need <= 1); slope {:.3} (need <= -1.7)",
            fit.slope
        ),
    )
}

/// Criterion 11: the optimistic-gradient ergodic certificate bound
/// `avg_k E[sum_i ||x_i^k - u_hat^k||^2] <= 5 n D0^2 / (2 psi (1 - L lambda)^2 (K+1))`.
pub fn check_fedog_ergodic() -> CheckReport {
    let start = Instant::now();
    let problem = fixtures::affine_split(1717, 5, 4);
    let n = problem.num_users();
    let lipschitz = problem.certificates().lipschitz.expect("certified");
    let range = lambda_range(lipschitz, 0.0).expect("range");
    let lambda = range.midpoint();
    let ls = range.ls_at(lambda).expect("in range");
    let dist = BlockDistribution::uniform(n).expect("valid distribution");
    let params = derive_rcog_params(1.0, 0.0, &vec![ls; n], &dist).expect("feasible");
    let rounds = 2000usize;
    let x0 = vec![0.0; problem.dim()];
    let x_star = problem.solution().expect("fixture has a solution");
    let dist0_sq: f64 = x0.iter().zip(&x_star).map(|(a, b)| (a - b) * (a - b)).sum();

    let mut total = 0.0;
    for seed in 0..50u64 {
        let mut config = FederatedConfig::new(FederatedAlgorithm::FedOg, rounds, 100 + seed);
        config.lambda = Some(lambda);
        config.omega = Some(1.0);
        config.x0 = Some(x0.clone());
        let outcome = run_federated(&problem, &config).expect("run");
        let avg: f64 = outcome
            .trace
            .rows
            .iter()
            .map(|r| r.certificate_residual)
            .sum::<f64>()
            / outcome.trace.rows.len() as f64;
        total += avg;
    }
    let seed_mean_avg = total / 50.0;
    let bound = 5.0 * n as f64 * dist0_sq
        / (2.0 * params.psi * (1.0 - lipschitz * lambda).powi(2) * (rounds as f64 + 1.0));
    let ratio = seed_mean_avg / (bound * 1.2);
    let pass = ratio <= 1.0;
    report(
        "fedog_ergodic_bound",
        start,
        60,
        pass,
        ratio,
        format!(
            "50-seed ergodic certificate {seed_mean_avg:.3e} vs 1.2x bound {:.3e}",
            bound * 1.2
        ),
    )
}

/// Criterion 12: the weighted residual `(k + nu) ||G x^k||^2` trends to zero
/// per seed (last-decile mean below first-decile mean for >= 19 of 20 seeds).
pub fn check_almost_sure_surrogate() -> CheckReport {
    let start = Instant::now();
    let op = fixtures::separable_cocoercive(1818, 8, 5, 0.15, 1.2);
    let dist = BlockDistribution::uniform(8).expect("valid distribution");
    let nu = 4.0;
    let schedule = ArcogSchedule::new(nu).expect("nu > 3");
    let beta_bar = op.cocoercivity().expect("certified").to_vec();
    // The almost-sure statement wants strictly slack co-coercivity choices.
    let beta: Vec<f64> = beta_bar.iter().map(|b| 0.9 * b).collect();
    let omega = beta
        .iter()
        .zip(dist.probs())
        .map(|(&b, &p)| b * p)
        .fold(f64::INFINITY, f64::min);
    let x_star = op.solution().expect("fixture has a solution");
    let x0 = fixtures::offset_start(&op, 31, 1.0);
    let spec = ArcogRunSpec {
        schedule,
        omega,
        variant: ArcogVariant::Direct,
        beta: Some(&beta),
        beta_bar: Some(&beta_bar),
    };

    let mut decreasing = 0usize;
    for seed in 0..20u64 {
        let trace = run_arcog(
            &op,
            &x0,
            Some(&x_star),
            &spec,
            &dist,
            &RunOptions::new(5000, seed),
        )
        .expect("run");
        let res: Vec<f64> = trace.rows.iter().map(|r| r.res_sq).collect();
        if weighted_tail_trend(&res, nu)
            .expect("long enough")
            .decreasing()
        {
            decreasing += 1;
        }
    }
    let pass = decreasing >= 19;
    report(
        "almost_sure_surrogate",
        start,
        30,
        pass,
        decreasing as f64,
        format!("{decreasing}/20 seeds with decreasing weighted residual tail (need >= 19)"),
    )
}

/// Runs the named suite and returns one report per check.
pub fn run_suite(suite: Suite) -> Vec<CheckReport> {
    let mut reports = Vec::new();
    let lemmas = matches!(suite, Suite::Lemmas | Suite::All);
    let solvers = matches!(suite, Suite::Solvers | Suite::All);
    let federated = matches!(suite, Suite::Federated | Suite::All);
    if solvers {
        reports.push(check_practical_identity());
        reports.push(check_rcog_descent());
        reports.push(check_arcog_descent());
        reports.push(check_arcog_rate());
        reports.push(check_rcog_ergodic());
        reports.push(check_almost_sure_surrogate());
    }
    if lemmas {
        reports.push(check_consensus_resolvent());
        reports.push(check_fbfs_properties());
        reports.push(check_drs_cocoercivity());
        reports.push(check_resolvent_consistency());
    }
    if federated {
        reports.push(check_fedog_fidelity());
        reports.push(check_acfeddr_fidelity_rate());
        reports.push(check_fedog_ergodic());
    }
    reports
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::Resolvent;
    use crate::splitting::{SplitCertificates, UserOperator};

    #[test]
    fn suite_names_parse() {
        assert_eq!("lemmas".parse::<Suite>().unwrap(), Suite::Lemmas);
        assert_eq!("all".parse::<Suite>().unwrap(), Suite::All);
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn corrupted_resolvent_fails_named_checks() {
        // Perturb one user's resolvent away from its declared forward map.
        let clean = fixtures::affine_split(606, 5, 6);
        let mut users = clean.users().to_vec();
        if let UserOperator::Affine { m, b } = users[2].clone() {
            let perturbed = &m + DMatrix::identity(6, 6) * 0.05;
            users[2] = UserOperator::Custom {
                m,
                b: b.clone(),
                resolvent: Resolvent::AffineMonotone { m: perturbed, b },
            };
        } else {
            panic!("fixture should have affine users");
        }
        let corrupted = SplitProblem::new(
            users,
            clean.central().clone(),
            clean.dim(),
            SplitCertificates {
                ..clean.certificates().clone()
            },
        )
        .unwrap();
        let consistency = check_resolvent_consistency_on(&corrupted, 1);
        assert!(
            !consistency.pass,
            "corrupted fixture must fail: {}",
            consistency.line()
        );
        // The clean fixture passes the same check.
        let clean_report = check_resolvent_consistency_on(&clean, 1);
        assert!(clean_report.pass, "{}", clean_report.line());
    }
}
