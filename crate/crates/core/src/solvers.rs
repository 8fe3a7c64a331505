//! The randomized block-coordinate optimistic-gradient kernels: the
//! non-accelerated constant-stepsize scheme, the accelerated scheme with the
//! momentum schedule, and its memory-efficient practical form, together with
//! the parameter derivations the convergence guarantees prescribe.

use serde::{Deserialize, Serialize};

use crate::blockcore::{BlockDistribution, BlockVector};
use crate::error::{Error, Result};
use crate::operators::BlockOp;

/// Floor below which the practical kernel refuses to divide by `tau`.
pub const TAU_FLOOR: f64 = 1e-250;

/// Default `tau` threshold at which the practical kernel re-expresses its
/// state. Dividing increments by `tau` amplifies rounding error by `1/tau`,
/// so the state is rebased long before `tau` becomes genuinely small.
pub const TAU_RESCALE: f64 = 1e-4;

/// Enumeration cap shared with the exact conditional-expectation oracle.
pub const ENUMERATION_CAP: usize = 64;

fn positive(x: f64) -> f64 {
    x.max(0.0)
}

/// Constant stepsizes for the non-accelerated scheme, typically produced by
/// [`derive_rcog_params`], which guarantee the per-iteration descent
/// coefficient `psi` is positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcogParams {
    /// Relaxation weight.
    pub omega: f64,
    /// Forward coefficient on the previous iterate's operator value.
    pub gamma: f64,
    /// Forward coefficient on the current iterate's operator value.
    pub eta: f64,
    /// Weak-Minty parameter the stepsizes were derived for.
    pub rho: f64,
    /// Stepsize ceiling `min_i sqrt(p_i) / (2 L_i)`.
    pub rho_bar: f64,
    /// Descent coefficient `2 omega (eta - gamma) (omega gamma - rho - 2 omega (eta - gamma) / p_min)`.
    pub psi: f64,
}

impl RcogParams {
    /// Re-validates the stepsize window; returns an error when any inequality
    /// fails.
    pub fn validate(&self, p_min: f64) -> Result<()> {
        let RcogParams {
            omega,
            gamma,
            eta,
            rho,
            rho_bar,
            psi,
        } = *self;
        if !(omega > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "omega = {omega} must be > 0"
            )));
        }
        let lo = positive(rho) / omega;
        let hi = rho_bar / omega;
        if !(lo < gamma && gamma <= hi) {
            return Err(Error::InvalidParameter(format!(
                "gamma = {gamma} outside ({lo}, {hi}]"
            )));
        }
        let eta_hi = gamma + (omega * gamma - rho) * p_min / (2.0 * omega);
        if !(gamma < eta && eta < eta_hi) {
            return Err(Error::InvalidParameter(format!(
                "eta = {eta} outside ({gamma}, {eta_hi})"
            )));
        }
        let psi_check = 2.0
            * omega
            * (eta - gamma)
            * (omega * gamma - rho - 2.0 * omega * (eta - gamma) / p_min);
        if !(psi_check > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "psi = {psi_check} must be > 0"
            )));
        }
        if (psi - psi_check).abs() > 1e-12 * (1.0 + psi_check.abs()) {
            return Err(Error::InvalidParameter(format!(
                "stored psi = {psi} disagrees with recomputed {psi_check}"
            )));
        }
        Ok(())
    }
}

/// Derives the midpoint stepsizes `gamma = ([rho]_+ + rho_bar) / (2 omega)`
/// and `eta = gamma + (omega gamma - rho) p_min / (4 omega)`, after checking
/// the feasibility condition `|rho| < rho_bar = min_i sqrt(p_i) / (2 L_i)`.
pub fn derive_rcog_params(
    omega: f64,
    rho: f64,
    lipschitz: &[f64],
    dist: &BlockDistribution,
) -> Result<RcogParams> {
    if !(omega > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "omega = {omega} must be > 0"
        )));
    }
    if lipschitz.len() != dist.num_blocks() {
        return Err(Error::DimensionMismatch {
            expected: dist.num_blocks(),
            got: lipschitz.len(),
        });
    }
    let rho_bar = lipschitz
        .iter()
        .zip(dist.probs())
        .map(|(&l, &p)| p.sqrt() / (2.0 * l))
        .fold(f64::INFINITY, f64::min);
    if !rho_bar.is_finite() {
        return Err(Error::InvalidParameter(
            "all per-block Lipschitz constants are zero".into(),
        ));
    }
    if !(rho.abs() < rho_bar) {
        return Err(Error::InfeasibleStepsize { rho, rho_bar });
    }
    let gamma = (positive(rho) + rho_bar) / (2.0 * omega);
    let p_min = dist.p_min();
    let eta = gamma + (omega * gamma - rho) * p_min / (4.0 * omega);
    let psi =
        2.0 * omega * (eta - gamma) * (omega * gamma - rho - 2.0 * omega * (eta - gamma) / p_min);
    let params = RcogParams {
        omega,
        gamma,
        eta,
        rho,
        rho_bar,
        psi,
    };
    params.validate(p_min)?;
    Ok(params)
}

/// One non-accelerated step: block `i_k` moves by
/// `-(omega / p_{i_k}) (eta [Gx]_{i_k} - gamma [Gx_prev]_{i_k})`; all other
/// blocks are untouched. Exactly two block evaluations of `G` are performed.
pub fn rcog_step<O: BlockOp + ?Sized>(
    x_cur: &BlockVector,
    x_prev: &BlockVector,
    op: &O,
    params: &RcogParams,
    dist: &BlockDistribution,
    i_k: usize,
) -> Result<BlockVector> {
    x_cur.partition().check_block(i_k)?;
    let g_cur = op.eval_block(x_cur, i_k);
    let g_prev = op.eval_block(x_prev, i_k);
    let scale = params.omega / dist.prob(i_k);
    let mut next = x_cur.clone();
    for ((xv, gc), gp) in next.block_mut(i_k).iter_mut().zip(&g_cur).zip(&g_prev) {
        *xv -= scale * (params.eta * gc - params.gamma * gp);
    }
    Ok(next)
}

/// The accelerated scheme's per-iteration scalars at one index `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulePoint {
    pub t_cur: f64,
    pub t_next: f64,
    pub theta: f64,
    pub gamma: f64,
    pub eta: f64,
}

/// The momentum/stepsize schedule `t_k = (k + 2 nu + 1) / nu`,
/// `theta_k = gamma_k = (t_k - 2) / t_{k+1}`, `eta_k = (t_k - 1) / t_{k+1}`,
/// valid for any `nu > 3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcogSchedule {
    nu: f64,
}

impl ArcogSchedule {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu > 3.0) {
            return Err(Error::InvalidNu(nu));
        }
        Ok(Self { nu })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `t_k`, defined for `k >= -1` (the `k = -1` value feeds the initial
    /// potential through `t_0 eta_{-1} = 1`).
    pub fn t(&self, k: i64) -> f64 {
        (k as f64 + 2.0 * self.nu + 1.0) / self.nu
    }

    pub fn at(&self, k: i64) -> SchedulePoint {
        let t_cur = self.t(k);
        let t_next = self.t(k + 1);
        let theta = (t_cur - 2.0) / t_next;
        SchedulePoint {
            t_cur,
            t_next,
            theta,
            gamma: theta,
            eta: (t_cur - 1.0) / t_next,
        }
    }

    /// Verifies the schedule-validity conditions with `mu_k = 1` for all
    /// `0 <= k <= k_max`:
    /// `theta_k = (t_k - mu_k - 1)/t_{k+1}`,
    /// `gamma_k = t_{k+1} theta_k eta_k / (t_{k+1} theta_k + 1)`, and
    /// `t_k eta_{k-1} >= (1 - 1/(t_k - mu_k)) t_{k+1} eta_k`.
    pub fn check_conditions(&self, k_max: i64) -> Result<()> {
        let mu = 1.0;
        for k in 0..=k_max {
            let pt = self.at(k);
            let prev = self.at(k - 1);
            let theta_expect = (pt.t_cur - mu - 1.0) / pt.t_next;
            if (pt.theta - theta_expect).abs() > 1e-12 * (1.0 + theta_expect.abs()) {
                return Err(Error::InvalidParameter(format!(
                    "theta condition fails at k={k}"
                )));
            }
            let gamma_expect = pt.t_next * pt.theta * pt.eta / (pt.t_next * pt.theta + 1.0);
            if (pt.gamma - gamma_expect).abs() > 1e-12 * (1.0 + gamma_expect.abs()) {
                return Err(Error::InvalidParameter(format!(
                    "gamma condition fails at k={k}"
                )));
            }
            let lhs = pt.t_cur * prev.eta;
            let rhs = (1.0 - 1.0 / (pt.t_cur - mu)) * pt.t_next * pt.eta;
            if lhs < rhs - 1e-12 * (1.0 + rhs.abs()) {
                return Err(Error::InvalidParameter(format!(
                    "eta monotonicity condition fails at k={k}: {lhs} < {rhs}"
                )));
            }
            if !(pt.theta > 0.0 || k == 0 && pt.theta >= 0.0) || !(pt.theta < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "theta out of (0,1) at k={k}"
                )));
            }
        }
        Ok(())
    }
}

/// Closed-form schedule values `(t_k, theta_k, gamma_k, eta_k)` at index `k >= -1`.
pub fn arcog_schedule_at(nu: f64, k: i64) -> Result<(f64, f64, f64, f64)> {
    if k < -1 {
        return Err(Error::InvalidParameter(format!(
            "schedule index k = {k} must be >= -1"
        )));
    }
    let schedule = ArcogSchedule::new(nu)?;
    let pt = schedule.at(k);
    Ok((pt.t_cur, pt.theta, pt.gamma, pt.eta))
}

/// One accelerated step: full-vector momentum `theta_k (x^k - x^{k-1})` plus
/// a single-block optimistic correction on block `i_k`.
pub fn arcog_step_direct<O: BlockOp + ?Sized>(
    x_cur: &BlockVector,
    x_prev: &BlockVector,
    op: &O,
    point: &SchedulePoint,
    omega: f64,
    dist: &BlockDistribution,
    i_k: usize,
) -> Result<BlockVector> {
    x_cur.partition().check_block(i_k)?;
    let g_cur = op.eval_block(x_cur, i_k);
    let g_prev = op.eval_block(x_prev, i_k);
    let mut next = x_cur.clone();
    for ((nv, xc), xp) in next
        .as_mut_slice()
        .iter_mut()
        .zip(x_cur.as_slice())
        .zip(x_prev.as_slice())
    {
        *nv = xc + point.theta * (xc - xp);
    }
    let scale = omega / dist.prob(i_k);
    for ((nv, gc), gp) in next.block_mut(i_k).iter_mut().zip(&g_cur).zip(&g_prev) {
        *nv -= scale * (point.eta * gc - point.gamma * gp);
    }
    Ok(next)
}

/// State of the practical accelerated kernel, which avoids the full-vector
/// momentum by tracking the pair `(z, w)` with `x^k = z^k + c_k w^k`.
///
/// The pair `(z, w, tau, c)` is only determined up to a rebasing
/// `(z, w, tau, c) -> (z + c w, tau w, 1, 0)` that leaves every generated
/// iterate unchanged. The kernel applies this rebase whenever `tau` falls
/// below its threshold, because stored `w` grows like `1/tau` and would
/// otherwise swallow the iterate in rounding error.
#[derive(Debug, Clone, PartialEq)]
pub struct PracticalState {
    z: BlockVector,
    w: BlockVector,
    z_prev: BlockVector,
    w_prev: BlockVector,
    /// `tau_k` within the current base, with `tau = 1` after each rebase.
    tau: f64,
    /// `c_k` within the current base.
    c_cur: f64,
    c_prev: f64,
    k: i64,
    /// Rebase when `tau` drops below this; `0` disables rebasing entirely.
    renorm_threshold: f64,
    renorm_count: usize,
}

impl PracticalState {
    /// Fresh state at `x^0` with automatic rebasing enabled.
    pub fn new(x0: &BlockVector) -> Self {
        Self::with_threshold(x0, TAU_RESCALE)
    }

    /// Fresh state that never rebases; `tau` then decays monotonically and
    /// the kernel errors out when it underflows [`TAU_FLOOR`].
    pub fn new_raw(x0: &BlockVector) -> Self {
        Self::with_threshold(x0, 0.0)
    }

    pub fn with_threshold(x0: &BlockVector, renorm_threshold: f64) -> Self {
        let zeros = BlockVector::zeros(x0.partition().clone());
        Self {
            z: x0.clone(),
            w: zeros.clone(),
            z_prev: x0.clone(),
            w_prev: zeros,
            tau: 1.0,
            c_cur: 0.0,
            c_prev: 0.0,
            k: 0,
            renorm_threshold,
            renorm_count: 0,
        }
    }

    pub fn iteration(&self) -> i64 {
        self.k
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn c(&self) -> f64 {
        self.c_cur
    }

    pub fn renorm_count(&self) -> usize {
        self.renorm_count
    }

    /// The current iterate `x^k = z^k + c_k w^k`.
    pub fn reconstruct(&self) -> BlockVector {
        reconstruct_iterate(self)
    }

    /// The previous iterate `x^{k-1} = z^{k-1} + c_{k-1} w^{k-1}`.
    pub fn reconstruct_prev(&self) -> BlockVector {
        combine(&self.z_prev, self.c_prev, &self.w_prev)
    }

    #[cfg(test)]
    pub(crate) fn force_tau(&mut self, tau: f64) {
        self.tau = tau;
    }

    /// Re-expresses the state in a fresh base: `z += c w`, `w *= tau`, then
    /// `tau = 1`, `c = 0`. Applies the same affine map to the previous-step
    /// slots so both stored iterates are preserved exactly.
    pub fn renormalize(&mut self) {
        let c_r = self.c_cur;
        let tau_r = self.tau;
        for (zv, wv) in self.z.as_mut_slice().iter_mut().zip(self.w.as_slice()) {
            *zv += c_r * wv;
        }
        for wv in self.w.as_mut_slice().iter_mut() {
            *wv *= tau_r;
        }
        for (zv, wv) in self
            .z_prev
            .as_mut_slice()
            .iter_mut()
            .zip(self.w_prev.as_slice())
        {
            *zv += c_r * wv;
        }
        for wv in self.w_prev.as_mut_slice().iter_mut() {
            *wv *= tau_r;
        }
        self.c_prev = (self.c_prev - c_r) / tau_r;
        self.c_cur = 0.0;
        self.tau = 1.0;
        self.renorm_count += 1;
    }
}

fn combine(z: &BlockVector, c: f64, w: &BlockVector) -> BlockVector {
    let mut out = z.clone();
    for (ov, wv) in out.as_mut_slice().iter_mut().zip(w.as_slice()) {
        *ov += c * wv;
    }
    out
}

/// Returns `z + c_k w`.
pub fn reconstruct_iterate(state: &PracticalState) -> BlockVector {
    combine(&state.z, state.c_cur, &state.w)
}

/// One step of the practical kernel: only block `i_k` of `w` and `z` changes.
/// The operator arguments `z^k + c_k w^k` and `z^{k-1} + c_{k-1} w^{k-1}` are
/// formed lazily at evaluation time.
pub fn arcog_step_practical<O: BlockOp + ?Sized>(
    state: &mut PracticalState,
    op: &O,
    schedule: &ArcogSchedule,
    omega: f64,
    dist: &BlockDistribution,
    i_k: usize,
) -> Result<()> {
    state.z.partition().check_block(i_k)?;
    let point = schedule.at(state.k);
    let tau_next = state.tau * point.theta;
    if tau_next < TAU_FLOOR {
        return Err(Error::RenormalizationNeeded { tau: tau_next });
    }
    let x_cur = combine(&state.z, state.c_cur, &state.w);
    let x_prev = combine(&state.z_prev, state.c_prev, &state.w_prev);
    let g_cur = op.eval_block(&x_cur, i_k);
    let g_prev = op.eval_block(&x_prev, i_k);

    state.z_prev = state.z.clone();
    state.w_prev = state.w.clone();

    let w_scale = omega / (dist.prob(i_k) * tau_next);
    let z_scale = omega * state.c_cur / (dist.prob(i_k) * tau_next);
    {
        let wb = state.w.block_mut(i_k);
        for ((wv, gc), gp) in wb.iter_mut().zip(&g_cur).zip(&g_prev) {
            *wv -= w_scale * (point.eta * gc - point.gamma * gp);
        }
    }
    {
        let zb = state.z.block_mut(i_k);
        for ((zv, gc), gp) in zb.iter_mut().zip(&g_cur).zip(&g_prev) {
            *zv += z_scale * (point.eta * gc - point.gamma * gp);
        }
    }
    state.c_prev = state.c_cur;
    state.c_cur += tau_next;
    state.tau = tau_next;
    state.k += 1;
    if state.renorm_threshold > 0.0 && state.tau < state.renorm_threshold {
        state.renormalize();
    }
    Ok(())
}

/// The explicit constants from the accelerated-scheme guarantees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcogConstants {
    pub lambda0_bar: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl ArcogConstants {
    /// The last-iterate residual envelope
    /// `8 (C0 + 2 omega C2) / (omega^2 (k + nu)^2) * dist0_sq` at index `k`.
    pub fn residual_envelope(&self, omega: f64, nu: f64, dist0_sq: f64, k: usize) -> f64 {
        let t = k as f64 + nu;
        8.0 * (self.c0 + 2.0 * omega * self.c2) / (omega * omega * t * t) * dist0_sq
    }
}

/// Evaluates the constants for chosen per-block `beta_i <= beta_bar_i`,
/// requiring `nu > 3` and `0 < omega < 2 min_i beta_i p_i`.
pub fn arcog_constants(
    nu: f64,
    omega: f64,
    beta: &[f64],
    beta_bar: &[f64],
    dist: &BlockDistribution,
) -> Result<ArcogConstants> {
    if !(nu > 3.0) {
        return Err(Error::InvalidNu(nu));
    }
    let n = dist.num_blocks();
    if beta.len() != n || beta_bar.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: beta.len().min(beta_bar.len()),
        });
    }
    for i in 0..n {
        if !(beta[i] > 0.0 && beta[i] <= beta_bar[i] * (1.0 + 1e-12)) {
            return Err(Error::InvalidParameter(format!(
                "beta[{i}] = {} must lie in (0, beta_bar[{i}] = {}]",
                beta[i], beta_bar[i]
            )));
        }
    }
    let ceiling = 2.0
        * beta
            .iter()
            .zip(dist.probs())
            .map(|(&b, &p)| b * p)
            .fold(f64::INFINITY, f64::min);
    if !(omega > 0.0 && omega < ceiling) {
        return Err(Error::InfeasibleOmega { omega, ceiling });
    }
    let lambda0_bar = beta_bar
        .iter()
        .map(|&b| 1.0 / b)
        .fold(f64::NEG_INFINITY, f64::max);
    let lambda1 = beta
        .iter()
        .zip(dist.probs())
        .map(|(&b, &p)| (2.0 * b * p - omega) / p)
        .fold(f64::INFINITY, f64::min);
    let lambda2 = beta
        .iter()
        .zip(dist.probs())
        .map(|(&b, &p)| (1.0 - p) / (2.0 * b * p - omega))
        .fold(f64::INFINITY, f64::min);
    let lambda3 = beta
        .iter()
        .zip(dist.probs())
        .map(|(&b, &p)| 1.0 / (2.0 * b * p - omega))
        .fold(f64::INFINITY, f64::min);
    let c0 =
        2.0 * (1.0 + omega * lambda0_bar) * (2.0 * nu * (nu - 1.0) + omega * nu * nu / lambda2)
            + omega * omega * (nu - 1.0) * (nu - 1.0) * lambda0_bar * lambda0_bar / 4.0;
    let c1 = 4.0 * (2.0 * c0 + nu * (nu - 3.0) * (1.0 + omega * lambda0_bar))
        / ((nu - 3.0) * omega * omega);
    let c2 = nu * nu * (1.0 + omega * lambda0_bar) / lambda3 + omega * nu * c1 / 4.0;
    Ok(ArcogConstants {
        lambda0_bar,
        lambda1,
        lambda2,
        lambda3,
        c0,
        c1,
        c2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockcore::{BlockPartition, IndexStream};
    use crate::operators::{make_linear_weak_minty, make_separable_cocoercive, BlockOperator};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn identity_1d() -> BlockOperator {
        let part = BlockPartition::new(vec![1]).unwrap();
        make_linear_weak_minty(part, DMatrix::identity(1, 1), vec![0.0]).unwrap()
    }

    #[test]
    fn derive_params_frozen_uniform_example() {
        // n = 4, L_i = 1, p_i = 1/4, rho = 0, omega = 1.
        let dist = BlockDistribution::uniform(4).unwrap();
        let params = derive_rcog_params(1.0, 0.0, &[1.0; 4], &dist).unwrap();
        assert_relative_eq!(params.rho_bar, 0.25);
        assert_relative_eq!(params.gamma, 0.125);
        assert_relative_eq!(params.eta, 0.1328125);
        assert_relative_eq!(params.psi, 0.0009765625);
    }

    #[test]
    fn derive_params_nonuniform_lipschitz() {
        let dist = BlockDistribution::new(vec![0.5, 0.5]).unwrap();
        let params = derive_rcog_params(1.0, 0.0, &[1.0, 2.0], &dist).unwrap();
        assert_relative_eq!(params.rho_bar, 0.5f64.sqrt() / 4.0, max_relative = 1e-15);
    }

    #[test]
    fn derive_params_rejects_rho_at_ceiling() {
        let dist = BlockDistribution::uniform(4).unwrap();
        let err = derive_rcog_params(1.0, 0.25, &[1.0; 4], &dist).unwrap_err();
        assert!(matches!(err, Error::InfeasibleStepsize { .. }));
        // Negative rho of the same magnitude is also excluded.
        assert!(derive_rcog_params(1.0, -0.25, &[1.0; 4], &dist).is_err());
        // Just inside the ceiling is fine.
        assert!(derive_rcog_params(1.0, 0.2499, &[1.0; 4], &dist).is_ok());
    }

    #[test]
    fn rcog_step_fixed_point_at_root() {
        let part = BlockPartition::new(vec![2, 2]).unwrap();
        let op = make_linear_weak_minty(
            part.clone(),
            DMatrix::identity(4, 4),
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let dist = BlockDistribution::uniform(2).unwrap();
        let params = derive_rcog_params(1.0, 0.0, op.lipschitz().unwrap(), &dist).unwrap();
        let root = op.solution().unwrap();
        for i in 0..2 {
            let next = rcog_step(&root, &root, &op, &params, &dist, i).unwrap();
            assert_eq!(next, root);
        }
    }

    #[test]
    fn rcog_step_single_block_hand_value() {
        // n=1, G(x) = x: x_next = 1 - (0.2*1 - 0.1*2) = 1.
        let op = identity_1d();
        let dist = BlockDistribution::uniform(1).unwrap();
        let part = BlockPartition::new(vec![1]).unwrap();
        let x_cur = BlockVector::new(vec![1.0], part.clone()).unwrap();
        let x_prev = BlockVector::new(vec![2.0], part).unwrap();
        let params = RcogParams {
            omega: 1.0,
            gamma: 0.1,
            eta: 0.2,
            rho: 0.0,
            rho_bar: 0.5,
            psi: 1.0,
        };
        let next = rcog_step(&x_cur, &x_prev, &op, &params, &dist, 0).unwrap();
        assert_relative_eq!(next.as_slice()[0], 1.0);
    }

    #[test]
    fn schedule_values_at_zero() {
        let (t0, theta0, gamma0, eta0) = arcog_schedule_at(4.0, 0).unwrap();
        assert_relative_eq!(t0, 2.25);
        assert_relative_eq!(theta0, 0.1);
        assert_relative_eq!(gamma0, 0.1);
        assert_relative_eq!(eta0, 0.5);
    }

    #[test]
    fn schedule_limits_and_initial_eta() {
        let schedule = ArcogSchedule::new(4.0).unwrap();
        let far = schedule.at(1_000_000);
        assert!((far.theta - 1.0).abs() < 1e-4);
        assert!((far.eta - 1.0).abs() < 1e-4);
        // t_0 * eta_{-1} = t_{-1} - 1 = 1.
        let init = schedule.at(-1);
        assert_relative_eq!(schedule.t(0) * init.eta, 1.0, max_relative = 1e-15);
        assert!(schedule.t(0) > 2.0);
    }

    #[test]
    fn schedule_rejects_small_nu() {
        assert!(ArcogSchedule::new(3.0).is_err());
        assert!(arcog_schedule_at(2.9, 0).is_err());
    }

    #[test]
    fn schedule_validity_conditions_hold() {
        for &nu in &[3.5, 4.0, 7.0] {
            let schedule = ArcogSchedule::new(nu).unwrap();
            schedule.check_conditions(10_000).unwrap();
        }
    }

    #[test]
    fn arcog_direct_fixed_point_at_root() {
        let part = BlockPartition::new(vec![1, 2]).unwrap();
        let q1 = DMatrix::identity(1, 1);
        let q2 = DMatrix::identity(2, 2);
        let op = make_separable_cocoercive(part, vec![q1, q2], vec![0.5, -0.5, 1.0]).unwrap();
        let dist = BlockDistribution::uniform(2).unwrap();
        let schedule = ArcogSchedule::new(4.0).unwrap();
        let root = op.solution().unwrap();
        let next = arcog_step_direct(&root, &root, &op, &schedule.at(0), 0.3, &dist, 1).unwrap();
        assert_eq!(next, root);
    }

    #[test]
    fn arcog_direct_hand_value_scalar() {
        // n=1, G(x)=x, theta=0.1, eta=0.5, gamma=0.1, omega=1:
        // 1 + 0.1*(0.5) - (0.5*1 - 0.1*0.5) = 0.6
        let op = identity_1d();
        let dist = BlockDistribution::uniform(1).unwrap();
        let part = BlockPartition::new(vec![1]).unwrap();
        let x_cur = BlockVector::new(vec![1.0], part.clone()).unwrap();
        let x_prev = BlockVector::new(vec![0.5], part).unwrap();
        let point = SchedulePoint {
            t_cur: 0.0,
            t_next: 0.0,
            theta: 0.1,
            gamma: 0.1,
            eta: 0.5,
        };
        let next = arcog_step_direct(&x_cur, &x_prev, &op, &point, 1.0, &dist, 0).unwrap();
        assert_relative_eq!(next.as_slice()[0], 0.6);
    }

    #[test]
    fn arcog_with_zero_momentum_reduces_to_rcog() {
        let mut stream = IndexStream::new(2);
        let part = BlockPartition::new(vec![2, 2]).unwrap();
        let op = make_linear_weak_minty(
            part.clone(),
            DMatrix::identity(4, 4) * 1.5,
            vec![0.0, 1.0, 0.0, -1.0],
        )
        .unwrap();
        let dist = BlockDistribution::uniform(2).unwrap();
        let params = derive_rcog_params(1.0, 0.0, op.lipschitz().unwrap(), &dist).unwrap();
        let point = SchedulePoint {
            t_cur: 0.0,
            t_next: 0.0,
            theta: 0.0,
            gamma: params.gamma,
            eta: params.eta,
        };
        let data: Vec<f64> = (0..4).map(|_| stream.next_uniform()).collect();
        let prev: Vec<f64> = (0..4).map(|_| stream.next_uniform()).collect();
        let x_cur = BlockVector::new(data, part.clone()).unwrap();
        let x_prev = BlockVector::new(prev, part).unwrap();
        for i in 0..2 {
            let a = rcog_step(&x_cur, &x_prev, &op, &params, &dist, i).unwrap();
            let b =
                arcog_step_direct(&x_cur, &x_prev, &op, &point, params.omega, &dist, i).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn practical_first_step_matches_direct() {
        let part = BlockPartition::new(vec![2, 1]).unwrap();
        let q1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let q2 = DMatrix::from_row_slice(1, 1, &[0.7]);
        let op =
            make_separable_cocoercive(part.clone(), vec![q1, q2], vec![1.0, -2.0, 0.5]).unwrap();
        let dist = BlockDistribution::new(vec![0.4, 0.6]).unwrap();
        let schedule = ArcogSchedule::new(4.0).unwrap();
        let omega = 0.2;
        let x0 = BlockVector::new(vec![3.0, 0.0, -1.0], part).unwrap();

        let direct = arcog_step_direct(&x0, &x0, &op, &schedule.at(0), omega, &dist, 0).unwrap();

        let mut state = PracticalState::new(&x0);
        arcog_step_practical(&mut state, &op, &schedule, omega, &dist, 0).unwrap();
        let rebuilt = reconstruct_iterate(&state);
        for (a, b) in direct.as_slice().iter().zip(rebuilt.as_slice()) {
            assert_relative_eq!(a, b, max_relative = 1e-14, epsilon = 1e-14);
        }
        // c_1 = tau_1 = theta_0.
        assert_relative_eq!(state.c(), schedule.at(0).theta, max_relative = 1e-15);
    }

    #[test]
    fn practical_zero_operator_stays_put() {
        let part = BlockPartition::new(vec![2, 2]).unwrap();
        let op = BlockOperator::new(
            part.clone(),
            crate::operators::OperatorKind::Zero,
            Default::default(),
        )
        .unwrap();
        let dist = BlockDistribution::uniform(2).unwrap();
        let schedule = ArcogSchedule::new(4.0).unwrap();
        let x0 = BlockVector::new(vec![1.0, -1.0, 2.0, 0.5], part).unwrap();
        let mut state = PracticalState::new(&x0);
        let mut stream = IndexStream::new(0);
        for _ in 0..50 {
            let i = stream.next_block(&dist);
            arcog_step_practical(&mut state, &op, &schedule, 0.25, &dist, i).unwrap();
        }
        assert_eq!(reconstruct_iterate(&state), x0);
    }

    #[test]
    fn practical_matches_direct_over_many_steps() {
        let mut stream = IndexStream::new(77);
        let part = BlockPartition::new(vec![2, 3, 3]).unwrap();
        let blocks: Vec<DMatrix<f64>> = part
            .sizes()
            .iter()
            .map(|&s| {
                let a = DMatrix::from_fn(s, s, |_, _| 2.0 * stream.next_uniform() - 1.0);
                &a * a.transpose() + DMatrix::identity(s, s) * 0.2
            })
            .collect();
        let x_star: Vec<f64> = (0..8).map(|_| 2.0 * stream.next_uniform() - 1.0).collect();
        let op = make_separable_cocoercive(part.clone(), blocks, x_star).unwrap();
        let dist = BlockDistribution::uniform(3).unwrap();
        let schedule = ArcogSchedule::new(4.0).unwrap();
        let betas = op.cocoercivity().unwrap();
        let omega = betas
            .iter()
            .zip(dist.probs())
            .map(|(&b, &p)| b * p)
            .fold(f64::INFINITY, f64::min);

        let x0_data: Vec<f64> = (0..8).map(|_| 4.0 * stream.next_uniform() - 2.0).collect();
        let x0 = BlockVector::new(x0_data, part).unwrap();

        let mut cur = x0.clone();
        let mut prev = x0.clone();
        let mut state = PracticalState::new(&x0);
        let mut index_stream = IndexStream::new(123);
        for k in 0..500i64 {
            let i = index_stream.next_block(&dist);
            let next =
                arcog_step_direct(&cur, &prev, &op, &schedule.at(k), omega, &dist, i).unwrap();
            prev = cur;
            cur = next;
            arcog_step_practical(&mut state, &op, &schedule, omega, &dist, i).unwrap();
            let rebuilt = reconstruct_iterate(&state);
            let dev = rebuilt.dist_sq(&cur).sqrt() / (1.0 + cur.norm_sq().sqrt());
            assert!(dev <= 1e-9, "relative deviation {dev} at k={k}");
        }
    }

    #[test]
    fn practical_raw_tau_decreases_and_c_accumulates() {
        let part = BlockPartition::new(vec![1, 1]).unwrap();
        let op =
            make_linear_weak_minty(part.clone(), DMatrix::identity(2, 2) * 0.5, vec![0.0, 0.0])
                .unwrap();
        let dist = BlockDistribution::uniform(2).unwrap();
        let schedule = ArcogSchedule::new(4.0).unwrap();
        let x0 = BlockVector::new(vec![1.0, -1.0], part).unwrap();
        let mut state = PracticalState::new_raw(&x0);
        let mut stream = IndexStream::new(8);
        let mut last_tau = state.tau();
        let mut last_c = state.c();
        for _ in 0..200 {
            let i = stream.next_block(&dist);
            arcog_step_practical(&mut state, &op, &schedule, 0.1, &dist, i).unwrap();
            assert!(
                state.tau() > 0.0 && state.tau() < last_tau,
                "tau must strictly decrease"
            );
            assert!(state.c() >= last_c, "c must be nondecreasing");
            last_tau = state.tau();
            last_c = state.c();
        }
    }

    #[test]
    fn practical_raw_mode_errors_on_tau_underflow() {
        let part = BlockPartition::new(vec![1]).unwrap();
        let op = identity_1d();
        let dist = BlockDistribution::uniform(1).unwrap();
        let schedule = ArcogSchedule::new(4.0).unwrap();
        let x0 = BlockVector::new(vec![1.0], part).unwrap();
        let mut state = PracticalState::new_raw(&x0);
        state.force_tau(TAU_FLOOR * 0.5);
        let err = arcog_step_practical(&mut state, &op, &schedule, 0.1, &dist, 0).unwrap_err();
        assert!(matches!(err, Error::RenormalizationNeeded { .. }));
        // The rebasing kernel never lets tau approach the floor.
        let mut state = PracticalState::new(&x0);
        for _ in 0..200 {
            arcog_step_practical(&mut state, &op, &schedule, 0.1, &dist, 0).unwrap();
            assert!(state.tau() >= TAU_RESCALE * 1e-2);
        }
        assert!(state.renorm_count() > 0);
    }

    #[test]
    fn constants_match_uniform_remark_values() {
        // beta_i = beta_bar_i = beta, p_i = 1/n, omega = beta/n, nu = 4.
        let n = 5;
        let beta = 2.0;
        let dist = BlockDistribution::uniform(n).unwrap();
        let c = arcog_constants(4.0, beta / n as f64, &[beta; 5], &[beta; 5], &dist).unwrap();
        assert_relative_eq!(c.lambda0_bar, 1.0 / beta, max_relative = 1e-14);
        assert_relative_eq!(c.lambda1, beta, max_relative = 1e-14);
        assert_relative_eq!(c.lambda2, (n as f64 - 1.0) / beta, max_relative = 1e-14);
        assert_relative_eq!(c.lambda3, n as f64 / beta, max_relative = 1e-14);
    }

    #[test]
    fn constants_frozen_two_block_example() {
        let dist = BlockDistribution::new(vec![0.5, 0.5]).unwrap();
        let c = arcog_constants(4.0, 0.5, &[1.0, 1.0], &[1.0, 1.0], &dist).unwrap();
        assert_relative_eq!(c.lambda0_bar, 1.0);
        assert_relative_eq!(c.lambda1, 1.0);
        assert_relative_eq!(c.lambda2, 1.0);
        assert_relative_eq!(c.lambda3, 2.0);
        // Direct arithmetic from the displayed formulas.
        assert_relative_eq!(c.c0, 96.5625);
    }

    #[test]
    fn constants_reject_omega_at_ceiling() {
        let dist = BlockDistribution::new(vec![0.5, 0.5]).unwrap();
        let err = arcog_constants(4.0, 1.0, &[1.0, 1.0], &[1.0, 1.0], &dist).unwrap_err();
        assert!(matches!(err, Error::InfeasibleOmega { .. }));
    }
}
