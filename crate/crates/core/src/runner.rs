//! Trace-recording run drivers for the solver kernels. One run owns its
//! state and is single-threaded; callers parallelize across seeds.

use crate::blockcore::{BlockDistribution, BlockVector, IndexStream, WeightVector};
use crate::diagnostics::{
    arcog_descent_margin, arcog_lyapunov, rcog_descent_margin, rcog_lyapunov,
};
use crate::error::{Error, Result};
use crate::operators::BlockOp;
use crate::solvers::{
    arcog_step_direct, arcog_step_practical, rcog_step, ArcogSchedule, PracticalState, RcogParams,
};
use crate::trace::{AccelExtras, RunTrace, TraceRow};

/// Optional per-iteration diagnostics. Margins replay every step once per
/// block, so they multiply the run cost by roughly the block count.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiagnosticsOptions {
    pub lyapunov: bool,
    pub descent_margins: bool,
    /// Record the combination and block-difference norms used by the
    /// partial-sum checks (accelerated runs only).
    pub record_extras: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub max_iters: usize,
    /// Optional residual stop: the run ends once `||G x^k|| <= tol`.
    pub tol: Option<f64>,
    pub seed: u64,
    pub diagnostics: DiagnosticsOptions,
}

impl RunOptions {
    pub fn new(max_iters: usize, seed: u64) -> Self {
        Self {
            max_iters,
            tol: None,
            seed,
            diagnostics: DiagnosticsOptions::default(),
        }
    }
}

/// Runs the non-accelerated kernel for `max_iters` steps, recording one row
/// per visited state (so a zero-iteration run still has its initial row).
pub fn run_rcog<O: BlockOp + ?Sized>(
    op: &O,
    x0: &BlockVector,
    x_star: Option<&BlockVector>,
    params: &RcogParams,
    dist: &BlockDistribution,
    opts: &RunOptions,
) -> Result<RunTrace> {
    let diag = opts.diagnostics;
    if (diag.lyapunov || diag.descent_margins) && x_star.is_none() {
        return Err(Error::MissingSolution);
    }
    let sigma = WeightVector::ones(dist.num_blocks());
    let mut stream = IndexStream::new(opts.seed);
    let mut cur = x0.clone();
    let mut prev = x0.clone();
    let mut g_prev = op.eval_full(&prev);
    let mut rows = Vec::with_capacity(opts.max_iters + 1);
    let mut sampled: Option<usize> = None;
    for k in 0..=opts.max_iters {
        let g_cur = if k == 0 {
            g_prev.clone()
        } else {
            op.eval_full(&cur)
        };
        let res_sq = g_cur.norm_sq();
        let lyapunov = if diag.lyapunov {
            let star = x_star.expect("checked above");
            Some(rcog_lyapunov(&cur, &prev, &g_prev, star, params, &sigma)?.value)
        } else {
            None
        };
        let margin = if diag.descent_margins {
            let star = x_star.expect("checked above");
            Some(rcog_descent_margin(&cur, &prev, op, params, dist, star)?)
        } else {
            None
        };
        rows.push(TraceRow {
            k,
            block: sampled,
            res_sq,
            step_sq: cur.dist_sq(&prev),
            dist_sq: x_star.map(|s| cur.dist_sq(s)),
            lyapunov,
            margin,
        });
        if let Some(tol) = opts.tol {
            if res_sq.sqrt() <= tol {
                break;
            }
        }
        if k == opts.max_iters {
            break;
        }
        let i = stream.next_block(dist);
        let next = rcog_step(&cur, &prev, op, params, dist, i)?;
        prev = cur;
        cur = next;
        g_prev = g_cur;
        sampled = Some(i);
    }
    Ok(RunTrace {
        seed: opts.seed,
        rows,
        extras: None,
    })
}

/// Which form of the accelerated kernel drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArcogVariant {
    Direct,
    Practical,
}

/// Accelerated-run configuration beyond the generic options.
#[derive(Debug, Clone, Copy)]
pub struct ArcogRunSpec<'a> {
    pub schedule: ArcogSchedule,
    pub omega: f64,
    pub variant: ArcogVariant,
    /// Chosen per-block co-coercivity values, needed for the potential and
    /// the descent margins.
    pub beta: Option<&'a [f64]>,
    /// Declared per-block co-coercivity certificates, needed for the
    /// recorded block-difference norms.
    pub beta_bar: Option<&'a [f64]>,
}

/// Runs the accelerated kernel (direct or practical form), recording one row
/// per visited state plus the partial-sum inputs when requested.
pub fn run_arcog<O: BlockOp + ?Sized>(
    op: &O,
    x0: &BlockVector,
    x_star: Option<&BlockVector>,
    spec: &ArcogRunSpec,
    dist: &BlockDistribution,
    opts: &RunOptions,
) -> Result<RunTrace> {
    let diag = opts.diagnostics;
    if (diag.lyapunov || diag.descent_margins) && (x_star.is_none() || spec.beta.is_none()) {
        return Err(Error::MissingCertificate(
            "accelerated diagnostics need a known solution and chosen beta values",
        ));
    }
    if diag.record_extras && spec.beta_bar.is_none() {
        return Err(Error::MissingCertificate(
            "recording partial-sum inputs needs the co-coercivity certificates",
        ));
    }
    let mut stream = IndexStream::new(opts.seed);
    let mut cur = x0.clone();
    let mut prev = x0.clone();
    let mut practical = PracticalState::new(x0);
    let mut g_prev = op.eval_full(&prev);
    let mut rows = Vec::with_capacity(opts.max_iters + 1);
    let mut extras = AccelExtras::default();
    let mut sampled: Option<usize> = None;
    for k in 0..=opts.max_iters {
        let g_cur = if k == 0 {
            g_prev.clone()
        } else {
            op.eval_full(&cur)
        };
        let res_sq = g_cur.norm_sq();
        if diag.record_extras {
            let point = spec.schedule.at(k as i64);
            let combo_sq: f64 = g_cur
                .as_slice()
                .iter()
                .zip(g_prev.as_slice())
                .map(|(gc, gp)| {
                    let d = point.eta * gc - point.gamma * gp;
                    d * d
                })
                .sum();
            extras.combo_sq.push(combo_sq);
            let beta_bar = spec.beta_bar.expect("checked above");
            let mut blockdiff = 0.0;
            for i in 0..dist.num_blocks() {
                let d_sq: f64 = g_cur
                    .block(i)
                    .iter()
                    .zip(g_prev.block(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                blockdiff += beta_bar[i] * d_sq;
            }
            extras.blockdiff_weighted_sq.push(blockdiff);
        }
        let lyapunov = if diag.lyapunov {
            let star = x_star.expect("checked above");
            let beta = spec.beta.expect("checked above");
            let point = spec.schedule.at(k as i64);
            let eta_prev = spec.schedule.at(k as i64 - 1).eta;
            Some(
                arcog_lyapunov(
                    &cur,
                    &prev,
                    &g_prev,
                    star,
                    beta,
                    spec.omega,
                    point.t_cur,
                    eta_prev,
                    1.0,
                )?
                .value,
            )
        } else {
            None
        };
        let margin = if diag.descent_margins {
            let star = x_star.expect("checked above");
            let beta = spec.beta.expect("checked above");
            Some(arcog_descent_margin(
                &cur,
                &prev,
                op,
                &spec.schedule,
                spec.omega,
                dist,
                star,
                beta,
                k as i64,
            )?)
        } else {
            None
        };
        rows.push(TraceRow {
            k,
            block: sampled,
            res_sq,
            step_sq: cur.dist_sq(&prev),
            dist_sq: x_star.map(|s| cur.dist_sq(s)),
            lyapunov,
            margin,
        });
        if let Some(tol) = opts.tol {
            if res_sq.sqrt() <= tol {
                break;
            }
        }
        if k == opts.max_iters {
            break;
        }
        let i = stream.next_block(dist);
        match spec.variant {
            ArcogVariant::Direct => {
                let next = arcog_step_direct(
                    &cur,
                    &prev,
                    op,
                    &spec.schedule.at(k as i64),
                    spec.omega,
                    dist,
                    i,
                )?;
                prev = cur;
                cur = next;
            }
            ArcogVariant::Practical => {
                arcog_step_practical(&mut practical, op, &spec.schedule, spec.omega, dist, i)?;
                prev = std::mem::replace(&mut cur, practical.reconstruct());
            }
        }
        g_prev = g_cur;
        sampled = Some(i);
    }
    let extras = if diag.record_extras {
        Some(extras)
    } else {
        None
    };
    Ok(RunTrace {
        seed: opts.seed,
        rows,
        extras,
    })
}

/// Seed-by-seed mean of a per-iteration series extracted from traces; all
/// traces must be equally long.
pub fn seed_mean<F>(traces: &[RunTrace], f: F) -> Result<Vec<f64>>
where
    F: Fn(&TraceRow) -> f64,
{
    let first = traces
        .first()
        .ok_or_else(|| Error::Config("no traces".into()))?;
    let len = first.rows.len();
    let mut mean = vec![0.0; len];
    for trace in traces {
        if trace.rows.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                got: trace.rows.len(),
            });
        }
        for (m, row) in mean.iter_mut().zip(&trace.rows) {
            *m += f(row);
        }
    }
    for m in &mut mean {
        *m /= traces.len() as f64;
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockcore::BlockPartition;
    use crate::operators::make_separable_cocoercive;
    use nalgebra::DMatrix;

    fn small_instance() -> (
        crate::operators::BlockOperator,
        BlockVector,
        BlockDistribution,
    ) {
        let part = BlockPartition::new(vec![2, 2]).unwrap();
        let qs = vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 0.5];
        let op = make_separable_cocoercive(part.clone(), qs, vec![1.0, -1.0, 0.5, 0.0]).unwrap();
        let x0 = BlockVector::new(vec![3.0, 2.0, -1.0, 1.0], part).unwrap();
        let dist = BlockDistribution::uniform(2).unwrap();
        (op, x0, dist)
    }

    #[test]
    fn zero_iterations_give_initial_row_only() {
        let (op, x0, dist) = small_instance();
        let params =
            crate::solvers::derive_rcog_params(1.0, 0.0, op.lipschitz().unwrap(), &dist).unwrap();
        let trace = run_rcog(&op, &x0, None, &params, &dist, &RunOptions::new(0, 1)).unwrap();
        assert_eq!(trace.rows.len(), 1);
        assert_eq!(trace.rows[0].k, 0);
        assert_eq!(trace.rows[0].block, None);
        assert_eq!(trace.rows[0].step_sq, 0.0);
    }

    #[test]
    fn same_seed_gives_identical_traces() {
        let (op, x0, dist) = small_instance();
        let params =
            crate::solvers::derive_rcog_params(1.0, 0.0, op.lipschitz().unwrap(), &dist).unwrap();
        let star = op.solution().unwrap();
        let a = run_rcog(
            &op,
            &x0,
            Some(&star),
            &params,
            &dist,
            &RunOptions::new(200, 9),
        )
        .unwrap();
        let b = run_rcog(
            &op,
            &x0,
            Some(&star),
            &params,
            &dist,
            &RunOptions::new(200, 9),
        )
        .unwrap();
        assert_eq!(a, b);
        let c = run_rcog(
            &op,
            &x0,
            Some(&star),
            &params,
            &dist,
            &RunOptions::new(200, 10),
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn residual_tolerance_stops_early() {
        let (op, x0, dist) = small_instance();
        let params =
            crate::solvers::derive_rcog_params(1.0, 0.0, op.lipschitz().unwrap(), &dist).unwrap();
        let mut opts = RunOptions::new(100_000, 3);
        opts.tol = Some(1e-3);
        let trace = run_rcog(&op, &x0, None, &params, &dist, &opts).unwrap();
        assert!(trace.rows.len() < 100_001);
        assert!(trace.rows.last().unwrap().res_sq.sqrt() <= 1e-3);
    }

    #[test]
    fn practical_and_direct_traces_agree() {
        let (op, x0, dist) = small_instance();
        let schedule = ArcogSchedule::new(4.0).unwrap();
        let beta = op.cocoercivity().unwrap().to_vec();
        let omega = 0.5
            * beta
                .iter()
                .zip(dist.probs())
                .map(|(&b, &p)| b * p)
                .fold(f64::INFINITY, f64::min);
        let star = op.solution().unwrap();
        let mk_spec = |variant| ArcogRunSpec {
            schedule,
            omega,
            variant,
            beta: Some(&beta),
            beta_bar: Some(&beta),
        };
        let opts = RunOptions::new(1000, 5);
        let direct = run_arcog(
            &op,
            &x0,
            Some(&star),
            &mk_spec(ArcogVariant::Direct),
            &dist,
            &opts,
        )
        .unwrap();
        let practical = run_arcog(
            &op,
            &x0,
            Some(&star),
            &mk_spec(ArcogVariant::Practical),
            &dist,
            &opts,
        )
        .unwrap();
        assert_eq!(direct.rows.len(), practical.rows.len());
        for (a, b) in direct.rows.iter().zip(&practical.rows) {
            assert_eq!(a.block, b.block, "index streams diverged");
            let scale = 1.0 + a.res_sq.abs();
            assert!((a.res_sq - b.res_sq).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn seed_mean_averages_rows() {
        let (op, x0, dist) = small_instance();
        let params =
            crate::solvers::derive_rcog_params(1.0, 0.0, op.lipschitz().unwrap(), &dist).unwrap();
        let traces: Vec<_> = (0..4)
            .map(|s| run_rcog(&op, &x0, None, &params, &dist, &RunOptions::new(50, s)).unwrap())
            .collect();
        let mean = seed_mean(&traces, |row| row.res_sq).unwrap();
        assert_eq!(mean.len(), 51);
        let hand: f64 = traces.iter().map(|t| t.rows[10].res_sq).sum::<f64>() / 4.0;
        assert_eq!(mean[10], hand);
    }
}
