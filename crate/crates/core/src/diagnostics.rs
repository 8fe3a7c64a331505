//! Lyapunov evaluators, the exact conditional-expectation oracle, residual
//! metrics, rate-slope fitting, and partial-sum bound checks.
//!
//! The conditional-expectation oracle is the central verifier: it replays a
//! single randomized step once per block and weights the outcomes by the
//! sampling probabilities, so descent inequalities are checked with no Monte
//! Carlo error at all.

use crate::blockcore::{weighted_diff_norm_sq, BlockDistribution, BlockVector, WeightVector};
use crate::error::{Error, Result};
use crate::operators::BlockOp;
use crate::solvers::{
    arcog_step_direct, rcog_step, ArcogConstants, ArcogSchedule, RcogParams, SchedulePoint,
    ENUMERATION_CAP,
};

/// The non-accelerated potential
/// `P_k = ||x^k + omega gamma G x^{k-1} - x*||^2 + ||x^k - x^{k-1}||^2_sigma`,
/// with its two components stored separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovRcog {
    pub value: f64,
    pub anchor_sq: f64,
    pub step_sq_weighted: f64,
}

/// Evaluates the non-accelerated potential. `g_prev` must be `G x^{k-1}`.
pub fn rcog_lyapunov(
    x_cur: &BlockVector,
    x_prev: &BlockVector,
    g_prev: &BlockVector,
    x_star: &BlockVector,
    params: &RcogParams,
    sigma: &WeightVector,
) -> Result<LyapunovRcog> {
    let og = params.omega * params.gamma;
    let mut anchor_sq = 0.0;
    for ((xv, gv), sv) in x_cur
        .as_slice()
        .iter()
        .zip(g_prev.as_slice())
        .zip(x_star.as_slice())
    {
        let d = xv + og * gv - sv;
        anchor_sq += d * d;
    }
    let step_sq_weighted = weighted_diff_norm_sq(x_cur, x_prev, sigma)?;
    Ok(LyapunovRcog {
        value: anchor_sq + step_sq_weighted,
        anchor_sq,
        step_sq_weighted,
    })
}

/// The accelerated potential at index `k`:
/// `2 omega t_k eta_{k-1} [<G x^{k-1}, x^{k-1} - x*> - sum_i beta_i ||[G x^{k-1}]_i||^2]
///  + ||x^{k-1} - x* + t_k (x^k - x^{k-1})||^2 + mu_k ||x^{k-1} - x*||^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovArcog {
    pub value: f64,
    pub cross_term: f64,
    pub extrapolation_sq: f64,
    pub distance_sq: f64,
}

/// Evaluates the accelerated potential. `g_prev` must be `G x^{k-1}`;
/// `t_cur` and `eta_prev` are `t_k` and `eta_{k-1}`.
#[allow(clippy::too_many_arguments)]
pub fn arcog_lyapunov(
    x_cur: &BlockVector,
    x_prev: &BlockVector,
    g_prev: &BlockVector,
    x_star: &BlockVector,
    beta: &[f64],
    omega: f64,
    t_cur: f64,
    eta_prev: f64,
    mu: f64,
) -> Result<LyapunovArcog> {
    let n = x_cur.partition().num_blocks();
    if beta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: beta.len(),
        });
    }
    let mut inner = 0.0;
    for ((gv, xv), sv) in g_prev
        .as_slice()
        .iter()
        .zip(x_prev.as_slice())
        .zip(x_star.as_slice())
    {
        inner += gv * (xv - sv);
    }
    let mut weighted_g_sq = 0.0;
    for i in 0..n {
        let block_sq: f64 = g_prev.block(i).iter().map(|v| v * v).sum();
        weighted_g_sq += beta[i] * block_sq;
    }
    let cross_term = 2.0 * omega * t_cur * eta_prev * (inner - weighted_g_sq);

    let mut extrapolation_sq = 0.0;
    let mut distance_sq = 0.0;
    for ((xp, xc), sv) in x_prev
        .as_slice()
        .iter()
        .zip(x_cur.as_slice())
        .zip(x_star.as_slice())
    {
        let e = xp - sv + t_cur * (xc - xp);
        extrapolation_sq += e * e;
        let d = xp - sv;
        distance_sq += d * d;
    }
    Ok(LyapunovArcog {
        value: cross_term + extrapolation_sq + mu * distance_sq,
        cross_term,
        extrapolation_sq,
        distance_sq,
    })
}

/// Which single-step kernel the enumeration oracle replays.
pub enum Stepper<'a> {
    Rcog(&'a RcogParams),
    ArcogDirect {
        point: &'a SchedulePoint,
        omega: f64,
    },
}

/// `sum_i p_i f(step(x_cur, x_prev, i))`: the exact conditional expectation
/// of `f(x^{k+1})` given the current state, with no sampling error.
pub fn exact_conditional_step<O, F>(
    stepper: &Stepper,
    x_cur: &BlockVector,
    x_prev: &BlockVector,
    op: &O,
    dist: &BlockDistribution,
    f: F,
) -> Result<f64>
where
    O: BlockOp + ?Sized,
    F: Fn(&BlockVector) -> Result<f64>,
{
    let n = dist.num_blocks();
    if n > ENUMERATION_CAP {
        return Err(Error::EnumerationCapExceeded {
            n,
            cap: ENUMERATION_CAP,
        });
    }
    let mut expectation = 0.0;
    for i in 0..n {
        let next = match stepper {
            Stepper::Rcog(params) => rcog_step(x_cur, x_prev, op, params, dist, i)?,
            Stepper::ArcogDirect { point, omega } => {
                arcog_step_direct(x_cur, x_prev, op, point, *omega, dist, i)?
            }
        };
        expectation += dist.prob(i) * f(&next)?;
    }
    Ok(expectation)
}

/// `E_k[P_{k+1}] - P_k + psi ||G x^k||^2` via exact enumeration; the descent
/// guarantee makes this nonpositive on certified instances with feasible
/// parameters, up to rounding.
pub fn rcog_descent_margin<O: BlockOp + ?Sized>(
    x_cur: &BlockVector,
    x_prev: &BlockVector,
    op: &O,
    params: &RcogParams,
    dist: &BlockDistribution,
    x_star: &BlockVector,
) -> Result<f64> {
    let sigma = WeightVector::ones(dist.num_blocks());
    let g_cur = op.eval_full(x_cur);
    let g_prev = op.eval_full(x_prev);
    let p_cur = rcog_lyapunov(x_cur, x_prev, &g_prev, x_star, params, &sigma)?;
    let expected_next =
        exact_conditional_step(&Stepper::Rcog(params), x_cur, x_prev, op, dist, |x_next| {
            Ok(rcog_lyapunov(x_next, x_cur, &g_cur, x_star, params, &sigma)?.value)
        })?;
    Ok(expected_next - p_cur.value + params.psi * g_cur.norm_sq())
}

/// `E_k[Phat_{k+1}] - Phat_k` via exact enumeration; nonpositive under the
/// schedule with `mu_k = 1` on certified co-coercive instances.
#[allow(clippy::too_many_arguments)]
pub fn arcog_descent_margin<O: BlockOp + ?Sized>(
    x_cur: &BlockVector,
    x_prev: &BlockVector,
    op: &O,
    schedule: &ArcogSchedule,
    omega: f64,
    dist: &BlockDistribution,
    x_star: &BlockVector,
    beta: &[f64],
    k: i64,
) -> Result<f64> {
    let mu = 1.0;
    let point = schedule.at(k);
    let prev_point = schedule.at(k - 1);
    let g_cur = op.eval_full(x_cur);
    let g_prev = op.eval_full(x_prev);
    let p_cur = arcog_lyapunov(
        x_cur,
        x_prev,
        &g_prev,
        x_star,
        beta,
        omega,
        point.t_cur,
        prev_point.eta,
        mu,
    )?;
    let expected_next = exact_conditional_step(
        &Stepper::ArcogDirect {
            point: &point,
            omega,
        },
        x_cur,
        x_prev,
        op,
        dist,
        |x_next| {
            Ok(arcog_lyapunov(
                x_next,
                x_cur,
                &g_cur,
                x_star,
                beta,
                omega,
                point.t_next,
                point.eta,
                mu,
            )?
            .value)
        },
    )?;
    Ok(expected_next - p_cur.value)
}

/// The three per-iterate residual scalars. Full operator evaluation happens
/// here only; it never feeds back into a solver path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualMetrics {
    pub res_sq: f64,
    pub step_sq: f64,
    pub dist_sq: Option<f64>,
}

pub fn residual_metrics<O: BlockOp + ?Sized>(
    x_cur: &BlockVector,
    x_prev: &BlockVector,
    op: &O,
    x_star: Option<&BlockVector>,
) -> ResidualMetrics {
    let res_sq = op.eval_full(x_cur).norm_sq();
    let step_sq = x_cur.dist_sq(x_prev);
    let dist_sq = x_star.map(|s| x_cur.dist_sq(s));
    ResidualMetrics {
        res_sq,
        step_sq,
        dist_sq,
    }
}

/// Least-squares line on `(log k, log y_k)` over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub k_lo: usize,
    pub k_hi: usize,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit in log space.
    pub rms_residual: f64,
}

/// Fits `log y_k ~ intercept + slope * log k` for `k` in `[k_lo, k_hi]`.
/// `series[k]` holds `y_k`; every value inside the window must be positive.
pub fn fit_rate_slope(series: &[f64], k_lo: usize, k_hi: usize) -> Result<RateFit> {
    if k_lo < 1 || k_hi < k_lo || k_hi >= series.len() {
        return Err(Error::InvalidWindow {
            lo: k_lo,
            hi: k_hi.min(series.len()),
        });
    }
    let mut xs = Vec::with_capacity(k_hi - k_lo + 1);
    let mut ys = Vec::with_capacity(k_hi - k_lo + 1);
    for k in k_lo..=k_hi {
        let y = series[k];
        if !(y > 0.0) {
            return Err(Error::NonPositiveTraceValue { k, value: y });
        }
        xs.push((k as f64).ln());
        ys.push(y.ln());
    }
    let n = xs.len() as f64;
    let mean_x: f64 = xs.iter().sum::<f64>() / n;
    let mean_y: f64 = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidWindow { lo: k_lo, hi: k_hi });
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let mut ss = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let r = y - (intercept + slope * x);
        ss += r * r;
    }
    Ok(RateFit {
        k_lo,
        k_hi,
        slope,
        intercept,
        rms_residual: (ss / n).sqrt(),
    })
}

/// Per-iteration inputs for the partial-sum checks, averaged across seeds
/// before being passed in. Index `k` runs from the initial state.
#[derive(Debug, Clone, Default)]
pub struct SummableInputs {
    /// `||G x^k||^2`
    pub res_sq: Vec<f64>,
    /// `||x^k - x^{k-1}||^2`
    pub step_sq: Vec<f64>,
    /// `||eta_k G x^k - gamma_k G x^{k-1}||^2`
    pub combo_sq: Vec<f64>,
    /// `sum_i beta_bar_i ||[G x^k]_i - [G x^{k-1}]_i||^2`
    pub blockdiff_weighted_sq: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl BoundCheck {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            pass: lhs <= rhs,
        }
    }
}

/// The four partial-sum bounds of the accelerated guarantee, each compared
/// against its stated right-hand side scaled by `slack`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummableReport {
    pub weighted_combo: BoundCheck,
    pub weighted_step: BoundCheck,
    pub weighted_residual: BoundCheck,
    pub weighted_blockdiff: BoundCheck,
}

impl SummableReport {
    pub fn pass(&self) -> bool {
        self.weighted_combo.pass
            && self.weighted_step.pass
            && self.weighted_residual.pass
            && self.weighted_blockdiff.pass
    }
}

/// Checks the four partial sums against their closed-form bounds scaled by
/// `slack` (`1.0` for exact-expectation inputs, `1.2` for seed averages).
pub fn summable_checks(
    inputs: &SummableInputs,
    nu: f64,
    omega: f64,
    constants: &ArcogConstants,
    dist0_sq: f64,
    slack: f64,
) -> SummableReport {
    let mut combo_sum = 0.0;
    let mut step_sum = 0.0;
    let mut res_sum = 0.0;
    let mut blockdiff_sum = 0.0;
    for (k, &v) in inputs.combo_sq.iter().enumerate() {
        let w = k as f64 + 2.0 * nu + 2.0;
        combo_sum += w * w * v;
    }
    for (k, &v) in inputs.step_sq.iter().enumerate() {
        step_sum += (k as f64 + nu + 1.0) * v;
    }
    for (k, &v) in inputs.res_sq.iter().enumerate() {
        res_sum += (k as f64 + nu + 1.0) * v;
    }
    for (k, &v) in inputs.blockdiff_weighted_sq.iter().enumerate().skip(1) {
        let w = k as f64 + 1.0;
        blockdiff_sum += w * w * v;
    }
    let lam0 = constants.lambda0_bar;
    let combo_bound = 2.0 * nu * nu * (1.0 + omega * lam0) / (omega * constants.lambda1) * dist0_sq;
    let step_bound = nu * (1.0 + omega * lam0) * dist0_sq;
    let res_bound = constants.c1 * dist0_sq;
    let blockdiff_bound = constants.c2 * dist0_sq;
    SummableReport {
        weighted_combo: BoundCheck::new(combo_sum, combo_bound * slack),
        weighted_step: BoundCheck::new(step_sum, step_bound * slack),
        weighted_residual: BoundCheck::new(res_sum, res_bound * slack),
        weighted_blockdiff: BoundCheck::new(blockdiff_sum, blockdiff_bound * slack),
    }
}

/// First- and last-decile means of `(k + nu) y_k`, the surrogate trend
/// statistic for the almost-sure vanishing of the weighted residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendStat {
    pub first_decile_mean: f64,
    pub last_decile_mean: f64,
}

impl TrendStat {
    pub fn decreasing(&self) -> bool {
        self.last_decile_mean < self.first_decile_mean
    }
}

pub fn weighted_tail_trend(res_sq: &[f64], nu: f64) -> Result<TrendStat> {
    let n = res_sq.len();
    if n < 10 {
        return Err(Error::InvalidWindow { lo: 0, hi: n });
    }
    let weighted: Vec<f64> = res_sq
        .iter()
        .enumerate()
        .map(|(k, &v)| (k as f64 + nu) * v)
        .collect();
    let decile = n / 10;
    let first: f64 = weighted[..decile].iter().sum::<f64>() / decile as f64;
    let last: f64 = weighted[n - decile..].iter().sum::<f64>() / decile as f64;
    Ok(TrendStat {
        first_decile_mean: first,
        last_decile_mean: last,
    })
}
