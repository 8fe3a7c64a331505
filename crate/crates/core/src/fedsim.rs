//! Message-passing simulations of the two federated algorithms: the
//! optimistic-gradient method driven by the forward-backward-forward
//! residual, and the accelerated Douglas-Rachford method driven by the
//! practical-form accelerated kernel.
//!
//! One user is sampled per round; it receives the two latest central
//! resolvent outputs and ships back state increments. The server maintains
//! running means incrementally. Under an identical index stream the global
//! iterate sequences coincide with the corresponding solver kernels applied
//! to the residual operators on the product space, which is what the
//! fidelity suite verifies.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::blockcore::{BlockDistribution, BlockVector, IndexStream};
use crate::error::{Error, Result};
use crate::operators::{BlockOp, FactorizedResolvent};
use crate::solvers::{ArcogSchedule, RcogParams, TAU_RESCALE};
use crate::splitting::{lambda_range, DrsOperator, FbfsOperator, ProductPoint, SplitProblem};

/// Who sent a round message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageDirection {
    ServerToUser,
    UserToServer,
}

/// What a round message carries. Raw per-user iterates are never a payload;
/// only central resolvent outputs flow down and increments flow up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    /// The two latest central resolvent outputs.
    ResolventPair,
    /// The sampled user's increment of its summand vector.
    DeltaU,
    /// The sampled user's increments of its two state vectors.
    DeltaWz,
}

/// Ledger entry for one message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMessage {
    pub direction: MessageDirection,
    pub round: usize,
    pub user: usize,
    pub payload: PayloadKind,
    /// Estimated payload size: eight bytes per scalar shipped.
    pub bytes: usize,
}

/// Serializes a message ledger as JSON lines, one record per message.
pub fn messages_to_jsonl(messages: &[RoundMessage]) -> Result<String> {
    let mut out = String::new();
    for m in messages {
        out.push_str(&serde_json::to_string(m)?);
        out.push('\n');
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Optimistic-gradient simulation.
// ---------------------------------------------------------------------------

/// Server state: the running mean of the user summands and the two latest
/// central resolvent outputs.
#[derive(Debug, Clone)]
pub struct FedOgServerState {
    pub u_bar: Vec<f64>,
    pub u_hat_cur: Vec<f64>,
    pub u_hat_prev: Vec<f64>,
    pub round: usize,
}

/// Per-user state: the two latest local iterates and the cached summand.
#[derive(Debug, Clone)]
pub struct FedOgUserState {
    pub x_cur: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub u_cur: Vec<f64>,
    pub last_active: Option<usize>,
}

/// The full simulation of the optimistic-gradient federated algorithm.
pub struct FedOgSim<'a> {
    problem: &'a SplitProblem,
    params: RcogParams,
    lambda: f64,
    dist: BlockDistribution,
    b_resolvent: FactorizedResolvent,
    pub server: FedOgServerState,
    pub users: Vec<FedOgUserState>,
}

impl<'a> FedOgSim<'a> {
    /// Initializes every user at `x0`; the server mean and resolvent outputs
    /// are computed from the initial summands.
    pub fn new(
        problem: &'a SplitProblem,
        params: RcogParams,
        lambda: f64,
        dist: BlockDistribution,
        x0: &[f64],
    ) -> Result<Self> {
        let n = problem.num_users();
        let p = problem.dim();
        if x0.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: x0.len(),
            });
        }
        if dist.num_blocks() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: dist.num_blocks(),
            });
        }
        let lipschitz = problem
            .certificates()
            .lipschitz
            .ok_or(Error::MissingCertificate("common Lipschitz constant"))?;
        let rho = problem.certificates().rho.unwrap_or(0.0);
        let range = lambda_range(lipschitz, rho)?;
        if !range.contains(lambda) {
            return Err(Error::LambdaOutOfRange {
                lambda,
                lo: range.lo,
                hi: range.hi,
            });
        }
        params.validate(dist.p_min())?;
        let mut users = Vec::with_capacity(n);
        let mut u_bar = vec![0.0; p];
        for i in 0..n {
            let a = problem.user_forward(i, x0)?;
            let u: Vec<f64> = x0.iter().zip(&a).map(|(xv, av)| xv - lambda * av).collect();
            for (mv, uv) in u_bar.iter_mut().zip(&u) {
                *mv += uv;
            }
            users.push(FedOgUserState {
                x_cur: x0.to_vec(),
                x_prev: x0.to_vec(),
                u_cur: u,
                last_active: None,
            });
        }
        for mv in &mut u_bar {
            *mv /= n as f64;
        }
        let b_resolvent = problem.central().resolvent().factorize(lambda)?;
        let u_hat = b_resolvent.apply(&u_bar)?;
        Ok(Self {
            problem,
            params,
            lambda,
            dist,
            b_resolvent,
            server: FedOgServerState {
                u_bar,
                u_hat_cur: u_hat.clone(),
                u_hat_prev: u_hat,
                round: 0,
            },
            users,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// One communication round with the sampled user `i_k`.
    pub fn round(&mut self, i_k: usize) -> Result<Vec<RoundMessage>> {
        let n = self.problem.num_users();
        let p = self.problem.dim();
        if i_k >= n {
            return Err(Error::BlockIndexOutOfRange { index: i_k, n });
        }
        let k = self.server.round;
        let mut messages = Vec::with_capacity(2);
        // Server sends the two latest resolvent outputs; the older one is
        // needed whenever this user skipped the previous round.
        messages.push(RoundMessage {
            direction: MessageDirection::ServerToUser,
            round: k,
            user: i_k,
            payload: PayloadKind::ResolventPair,
            bytes: 2 * p * 8,
        });

        let user = &mut self.users[i_k];
        // The user's block of the global previous-round iterate: its stored
        // previous slot if it was the one sampled last round, else its
        // current value (untouched blocks carry over unchanged).
        let x_prev_global: &[f64] = if user.last_active == Some(k.wrapping_sub(1)) && k > 0 {
            &user.x_prev
        } else {
            &user.x_cur
        };
        let a_prev = self.problem.user_forward(i_k, x_prev_global)?;
        let a_hat_prev = self.problem.user_forward(i_k, &self.server.u_hat_prev)?;
        let a_cur = self.problem.user_forward(i_k, &user.x_cur)?;
        let a_hat_cur = self.problem.user_forward(i_k, &self.server.u_hat_cur)?;
        let lambda = self.lambda;
        let d_prev: Vec<f64> = (0..p)
            .map(|j| {
                x_prev_global[j] - self.server.u_hat_prev[j] - lambda * (a_prev[j] - a_hat_prev[j])
            })
            .collect();
        let d_cur: Vec<f64> = (0..p)
            .map(|j| user.x_cur[j] - self.server.u_hat_cur[j] - lambda * (a_cur[j] - a_hat_cur[j]))
            .collect();
        let scale = self.params.omega / self.dist.prob(i_k);
        let x_next: Vec<f64> = (0..p)
            .map(|j| {
                user.x_cur[j] - scale * (self.params.eta * d_cur[j] - self.params.gamma * d_prev[j])
            })
            .collect();
        let a_next = self.problem.user_forward(i_k, &x_next)?;
        let u_next: Vec<f64> = x_next
            .iter()
            .zip(&a_next)
            .map(|(xv, av)| xv - lambda * av)
            .collect();
        let delta_u: Vec<f64> = u_next
            .iter()
            .zip(&user.u_cur)
            .map(|(nv, ov)| nv - ov)
            .collect();
        user.x_prev = std::mem::replace(&mut user.x_cur, x_next);
        user.u_cur = u_next;
        user.last_active = Some(k);
        messages.push(RoundMessage {
            direction: MessageDirection::UserToServer,
            round: k,
            user: i_k,
            payload: PayloadKind::DeltaU,
            bytes: p * 8,
        });

        // Server folds the increment into its running mean and recomputes
        // the central resolvent output.
        for (mv, dv) in self.server.u_bar.iter_mut().zip(&delta_u) {
            *mv += dv / n as f64;
        }
        self.server.u_hat_prev = std::mem::replace(
            &mut self.server.u_hat_cur,
            self.b_resolvent.apply(&self.server.u_bar)?,
        );
        self.server.round += 1;
        Ok(messages)
    }

    /// The global iterate as a product point (diagnostic view).
    pub fn product_point(&self) -> Result<ProductPoint> {
        let part = self.problem.partition()?;
        let mut data = Vec::with_capacity(part.dim());
        for user in &self.users {
            data.extend_from_slice(&user.x_cur);
        }
        BlockVector::new(data, part)
    }

    /// `sum_i ||x_i - u_hat||^2`, the graph-pair solution certificate.
    pub fn certificate(&self) -> f64 {
        let mut total = 0.0;
        for user in &self.users {
            for (xv, hv) in user.x_cur.iter().zip(&self.server.u_hat_cur) {
                total += (xv - hv) * (xv - hv);
            }
        }
        total
    }

    /// Relative deviation of the incrementally maintained mean from the mean
    /// recomputed over user states.
    pub fn mean_drift(&self) -> f64 {
        let p = self.problem.dim();
        let n = self.users.len();
        let mut recomputed = vec![0.0; p];
        for user in &self.users {
            for (mv, uv) in recomputed.iter_mut().zip(&user.u_cur) {
                *mv += uv / n as f64;
            }
        }
        let mut err_sq = 0.0;
        let mut norm_sq = 0.0;
        for (a, b) in self.server.u_bar.iter().zip(&recomputed) {
            err_sq += (a - b) * (a - b);
            norm_sq += b * b;
        }
        err_sq.sqrt() / (1.0 + norm_sq.sqrt())
    }
}

// ---------------------------------------------------------------------------
// Accelerated Douglas-Rachford simulation.
// ---------------------------------------------------------------------------

/// A state rebase event: `z += c_r w`, `w *= tau_r`, recorded so offline
/// users can replay it from the deterministic schedule when next sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RebaseEvent {
    c_r: f64,
    tau_r: f64,
}

/// Per-user state of the accelerated simulation: two slots of the `(z, w)`
/// pair plus the rebase epoch this state is expressed in.
#[derive(Debug, Clone)]
pub struct AcFedDrUserState {
    pub z_cur: Vec<f64>,
    pub z_prev: Vec<f64>,
    pub w_cur: Vec<f64>,
    pub w_prev: Vec<f64>,
    pub last_active: Option<usize>,
    epoch_seen: usize,
}

/// Server state: incrementally maintained means, the two latest central
/// resolvent outputs, and the scalar schedule state.
#[derive(Debug, Clone)]
pub struct AcFedDrServerState {
    pub z_bar: Vec<f64>,
    pub w_bar: Vec<f64>,
    pub u_hat_cur: Vec<f64>,
    pub u_hat_prev: Vec<f64>,
    pub tau: f64,
    pub c_cur: f64,
    pub c_prev: f64,
    pub round: usize,
}

/// The full simulation of the accelerated Douglas-Rachford algorithm.
pub struct AcFedDrSim<'a> {
    problem: &'a SplitProblem,
    schedule: ArcogSchedule,
    omega: f64,
    beta: f64,
    dist: BlockDistribution,
    b_resolvent: FactorizedResolvent,
    user_resolvents: Vec<FactorizedResolvent>,
    rebase_log: Vec<RebaseEvent>,
    pub server: AcFedDrServerState,
    pub users: Vec<AcFedDrUserState>,
}

impl<'a> AcFedDrSim<'a> {
    pub fn new(
        problem: &'a SplitProblem,
        schedule: ArcogSchedule,
        omega: f64,
        beta: f64,
        dist: BlockDistribution,
        u0: &[f64],
    ) -> Result<Self> {
        let n = problem.num_users();
        let p = problem.dim();
        if u0.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: u0.len(),
            });
        }
        if dist.num_blocks() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: dist.num_blocks(),
            });
        }
        let ceiling = 2.0 * beta * dist.p_min();
        if !(omega > 0.0 && omega < ceiling) {
            return Err(Error::InfeasibleOmega { omega, ceiling });
        }
        let b_resolvent = problem.central().resolvent().factorize(beta)?;
        let user_resolvents = problem
            .users()
            .iter()
            .map(|u| u.resolvent().factorize(beta))
            .collect::<Result<Vec<_>>>()?;
        let users = (0..n)
            .map(|_| AcFedDrUserState {
                z_cur: u0.to_vec(),
                z_prev: u0.to_vec(),
                w_cur: vec![0.0; p],
                w_prev: vec![0.0; p],
                last_active: None,
                epoch_seen: 0,
            })
            .collect();
        let z_bar = u0.to_vec();
        let w_bar = vec![0.0; p];
        let u_hat = b_resolvent.apply(&z_bar)?;
        Ok(Self {
            problem,
            schedule,
            omega,
            beta,
            dist,
            b_resolvent,
            user_resolvents,
            rebase_log: Vec::new(),
            server: AcFedDrServerState {
                z_bar,
                w_bar,
                u_hat_cur: u_hat.clone(),
                u_hat_prev: u_hat,
                tau: 1.0,
                c_cur: 0.0,
                c_prev: 0.0,
                round: 0,
            },
            users,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn catch_up(log: &[RebaseEvent], user: &mut AcFedDrUserState) {
        for event in &log[user.epoch_seen..] {
            for (zv, wv) in user.z_cur.iter_mut().zip(&user.w_cur) {
                *zv += event.c_r * wv;
            }
            for wv in user.w_cur.iter_mut() {
                *wv *= event.tau_r;
            }
            for (zv, wv) in user.z_prev.iter_mut().zip(&user.w_prev) {
                *zv += event.c_r * wv;
            }
            for wv in user.w_prev.iter_mut() {
                *wv *= event.tau_r;
            }
        }
        user.epoch_seen = log.len();
    }

    /// One communication round with the sampled user `i_k`.
    pub fn round(&mut self, i_k: usize) -> Result<Vec<RoundMessage>> {
        let n = self.problem.num_users();
        let p = self.problem.dim();
        if i_k >= n {
            return Err(Error::BlockIndexOutOfRange { index: i_k, n });
        }
        let k = self.server.round;
        let point = self.schedule.at(k as i64);
        let tau_next = self.server.tau * point.theta;
        let mut messages = Vec::with_capacity(2);
        messages.push(RoundMessage {
            direction: MessageDirection::ServerToUser,
            round: k,
            user: i_k,
            payload: PayloadKind::ResolventPair,
            bytes: 2 * p * 8,
        });

        let user = &mut self.users[i_k];
        // Replay any state rebases this user slept through; the factors are
        // deterministic schedule data, so no extra communication is needed.
        Self::catch_up(&self.rebase_log, user);
        let (z_sel, w_sel): (&[f64], &[f64]) =
            if user.last_active == Some(k.wrapping_sub(1)) && k > 0 {
                (&user.z_prev, &user.w_prev)
            } else {
                (&user.z_cur, &user.w_cur)
            };
        let c_prev = self.server.c_prev;
        let c_cur = self.server.c_cur;
        let u_prev_i: Vec<f64> = z_sel
            .iter()
            .zip(w_sel)
            .map(|(zv, wv)| zv + c_prev * wv)
            .collect();
        let u_cur_i: Vec<f64> = user
            .z_cur
            .iter()
            .zip(&user.w_cur)
            .map(|(zv, wv)| zv + c_cur * wv)
            .collect();

        let reflect_prev: Vec<f64> = self
            .server
            .u_hat_prev
            .iter()
            .zip(&u_prev_i)
            .map(|(hv, uv)| 2.0 * hv - uv)
            .collect();
        let j_prev = self.user_resolvents[i_k].apply(&reflect_prev)?;
        let d_prev: Vec<f64> = self
            .server
            .u_hat_prev
            .iter()
            .zip(&j_prev)
            .map(|(hv, jv)| hv - jv)
            .collect();
        let reflect_cur: Vec<f64> = self
            .server
            .u_hat_cur
            .iter()
            .zip(&u_cur_i)
            .map(|(hv, uv)| 2.0 * hv - uv)
            .collect();
        let j_cur = self.user_resolvents[i_k].apply(&reflect_cur)?;
        let d_cur: Vec<f64> = self
            .server
            .u_hat_cur
            .iter()
            .zip(&j_cur)
            .map(|(hv, jv)| hv - jv)
            .collect();

        let denom = self.beta * tau_next * self.dist.prob(i_k);
        let delta_w: Vec<f64> = d_cur
            .iter()
            .zip(&d_prev)
            .map(|(dc, dp)| -(self.omega / denom) * (point.eta * dc - point.gamma * dp))
            .collect();
        let delta_z: Vec<f64> = delta_w.iter().map(|dw| -c_cur * dw).collect();

        user.z_prev.copy_from_slice(&user.z_cur);
        user.w_prev.copy_from_slice(&user.w_cur);
        for (zv, dv) in user.z_cur.iter_mut().zip(&delta_z) {
            *zv += dv;
        }
        for (wv, dv) in user.w_cur.iter_mut().zip(&delta_w) {
            *wv += dv;
        }
        user.last_active = Some(k);
        messages.push(RoundMessage {
            direction: MessageDirection::UserToServer,
            round: k,
            user: i_k,
            payload: PayloadKind::DeltaWz,
            bytes: 2 * p * 8,
        });

        // Server update: fold increments into the means, advance the scalar
        // schedule, and recompute the central resolvent output.
        for (mv, dv) in self.server.w_bar.iter_mut().zip(&delta_w) {
            *mv += dv / n as f64;
        }
        for (mv, dv) in self.server.z_bar.iter_mut().zip(&delta_z) {
            *mv += dv / n as f64;
        }
        let c_next = c_cur + tau_next;
        let arg: Vec<f64> = self
            .server
            .z_bar
            .iter()
            .zip(&self.server.w_bar)
            .map(|(zv, wv)| zv + c_next * wv)
            .collect();
        self.server.u_hat_prev =
            std::mem::replace(&mut self.server.u_hat_cur, self.b_resolvent.apply(&arg)?);
        self.server.c_prev = c_cur;
        self.server.c_cur = c_next;
        self.server.tau = tau_next;
        self.server.round += 1;

        if self.server.tau < TAU_RESCALE {
            self.rebase();
        }
        Ok(messages)
    }

    /// Rebases the server means and logs the event for lazy user replay.
    /// The reconstruction `u = z + c w` is invariant, so the resolvent
    /// outputs stay valid.
    fn rebase(&mut self) {
        let c_r = self.server.c_cur;
        let tau_r = self.server.tau;
        for (zv, wv) in self.server.z_bar.iter_mut().zip(&self.server.w_bar) {
            *zv += c_r * wv;
        }
        for wv in self.server.w_bar.iter_mut() {
            *wv *= tau_r;
        }
        self.server.c_prev = (self.server.c_prev - c_r) / tau_r;
        self.server.c_cur = 0.0;
        self.server.tau = 1.0;
        self.rebase_log.push(RebaseEvent { c_r, tau_r });
    }

    /// The per-user summands `u_i = z_i + c_k w_i` as a product point,
    /// replaying pending rebases without mutating the stored states.
    pub fn reconstruct_users(&self) -> Result<ProductPoint> {
        let part = self.problem.partition()?;
        let mut data = Vec::with_capacity(part.dim());
        for user in &self.users {
            let mut z = user.z_cur.clone();
            let mut w = user.w_cur.clone();
            for event in &self.rebase_log[user.epoch_seen..] {
                for (zv, wv) in z.iter_mut().zip(&w) {
                    *zv += event.c_r * wv;
                }
                for wv in w.iter_mut() {
                    *wv *= event.tau_r;
                }
            }
            let c = self.server.c_cur;
            data.extend(z.iter().zip(&w).map(|(zv, wv)| zv + c * wv));
        }
        BlockVector::new(data, part)
    }

    /// `sum_i ||u_hat - J_{beta A_i}(2 u_hat - u_i)||^2`, the reflected
    /// resolvent certificate at the current round.
    pub fn certificate(&self) -> Result<f64> {
        let u = self.reconstruct_users()?;
        let mut total = 0.0;
        for i in 0..self.problem.num_users() {
            let ui = u.block(i);
            let reflected: Vec<f64> = self
                .server
                .u_hat_cur
                .iter()
                .zip(ui)
                .map(|(hv, uv)| 2.0 * hv - uv)
                .collect();
            let ji = self.user_resolvents[i].apply(&reflected)?;
            for (hv, jv) in self.server.u_hat_cur.iter().zip(&ji) {
                total += (hv - jv) * (hv - jv);
            }
        }
        Ok(total)
    }

    /// Relative deviation of the incrementally maintained means from means
    /// recomputed over (caught-up) user states.
    pub fn mean_drift(&self) -> Result<f64> {
        let p = self.problem.dim();
        let n = self.users.len();
        let mut z_re = vec![0.0; p];
        let mut w_re = vec![0.0; p];
        for user in &self.users {
            let mut z = user.z_cur.clone();
            let mut w = user.w_cur.clone();
            for event in &self.rebase_log[user.epoch_seen..] {
                for (zv, wv) in z.iter_mut().zip(&w) {
                    *zv += event.c_r * wv;
                }
                for wv in w.iter_mut() {
                    *wv *= event.tau_r;
                }
            }
            for (mv, v) in z_re.iter_mut().zip(&z) {
                *mv += v / n as f64;
            }
            for (mv, v) in w_re.iter_mut().zip(&w) {
                *mv += v / n as f64;
            }
        }
        let drift = |a: &[f64], b: &[f64]| -> f64 {
            let mut err_sq = 0.0;
            let mut norm_sq = 0.0;
            for (x, y) in a.iter().zip(b) {
                err_sq += (x - y) * (x - y);
                norm_sq += y * y;
            }
            err_sq.sqrt() / (1.0 + norm_sq.sqrt())
        };
        Ok(drift(&self.server.z_bar, &z_re).max(drift(&self.server.w_bar, &w_re)))
    }

    /// Relative deviation of the server's resolvent output from the
    /// consensus resolvent of the reconstructed summands.
    pub fn u_hat_drift(&self) -> Result<f64> {
        let u = self.reconstruct_users()?;
        let (expected, _) = crate::splitting::consensus_resolvent(&u, self.beta, self.problem)?;
        let mut err_sq = 0.0;
        let mut norm_sq = 0.0;
        for (a, b) in self.server.u_hat_cur.iter().zip(&expected) {
            err_sq += (a - b) * (a - b);
            norm_sq += b * b;
        }
        Ok(err_sq.sqrt() / (1.0 + norm_sq.sqrt()))
    }
}

// ---------------------------------------------------------------------------
// Round-driving front end.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FederatedAlgorithm {
    FedOg,
    AcFedDr,
}

/// Run configuration for a federated simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FederatedConfig {
    pub algorithm: FederatedAlgorithm,
    pub rounds: usize,
    pub seed: u64,
    /// Relaxation weight; defaults to 1 for the optimistic-gradient method
    /// and to half the feasibility ceiling for the accelerated method.
    pub omega: Option<f64>,
    /// Splitting scale for the optimistic-gradient method; defaults to the
    /// midpoint of the feasible range.
    pub lambda: Option<f64>,
    /// Splitting scale for the accelerated method; defaults to 1.
    pub beta: Option<f64>,
    pub nu: Option<f64>,
    /// Initial point; defaults to the origin.
    pub x0: Option<Vec<f64>>,
    /// Record the per-round Lyapunov value of the driving kernel (needs a
    /// known solution).
    pub lyapunov: bool,
}

impl FederatedConfig {
    pub fn new(algorithm: FederatedAlgorithm, rounds: usize, seed: u64) -> Self {
        Self {
            algorithm,
            rounds,
            seed,
            omega: None,
            lambda: None,
            beta: None,
            nu: None,
            x0: None,
            lyapunov: false,
        }
    }
}

/// One recorded round of a federated run.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedRow {
    pub round: usize,
    pub sampled_user: Option<usize>,
    pub certificate_residual: f64,
    pub lyapunov: Option<f64>,
    pub cumulative_bytes: usize,
}

/// The trace of one federated run plus its message ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedTrace {
    pub seed: u64,
    pub rows: Vec<FederatedRow>,
}

impl FederatedTrace {
    /// CSV schema: `round,sampled_user,certificate_residual,lyapunov,cumulative_bytes`.
    pub fn to_csv(&self) -> String {
        self.to_csv_with_meta(None)
    }

    /// Same as [`FederatedTrace::to_csv`] with a metadata comment line.
    pub fn to_csv_with_meta(&self, config_hash: Option<&str>) -> String {
        let mut out = String::new();
        match config_hash {
            Some(hash) => {
                let _ = writeln!(out, "# seed={} config_hash={hash}", self.seed);
            }
            None => {
                let _ = writeln!(out, "# seed={}", self.seed);
            }
        }
        out.push_str("round,sampled_user,certificate_residual,lyapunov,cumulative_bytes\n");
        for row in &self.rows {
            let _ = write!(out, "{},", row.round);
            if let Some(u) = row.sampled_user {
                let _ = write!(out, "{u}");
            }
            let _ = write!(out, ",{},", row.certificate_residual);
            if let Some(l) = row.lyapunov {
                let _ = write!(out, "{l}");
            }
            let _ = writeln!(out, ",{}", row.cumulative_bytes);
        }
        out
    }

    pub fn certificate_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.certificate_residual).collect()
    }
}

/// Outcome of [`run_federated`]: the per-round trace and the full ledger.
#[derive(Debug, Clone)]
pub struct FederatedOutcome {
    pub trace: FederatedTrace,
    pub messages: Vec<RoundMessage>,
}

/// Drives a federated run: samples one user per round from the shared index
/// stream, records the solution certificate, and collects the message ledger.
pub fn run_federated(problem: &SplitProblem, config: &FederatedConfig) -> Result<FederatedOutcome> {
    let n = problem.num_users();
    let p = problem.dim();
    let dist = BlockDistribution::uniform(n)?;
    let x0 = match &config.x0 {
        Some(v) => {
            if v.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: v.len(),
                });
            }
            v.clone()
        }
        None => vec![0.0; p],
    };
    let mut stream = IndexStream::new(config.seed);
    let mut rows = Vec::with_capacity(config.rounds + 1);
    let mut messages: Vec<RoundMessage> = Vec::new();
    let mut cumulative_bytes = 0usize;

    match config.algorithm {
        FederatedAlgorithm::FedOg => {
            let lipschitz = problem
                .certificates()
                .lipschitz
                .ok_or(Error::MissingCertificate("common Lipschitz constant"))?;
            let rho = problem.certificates().rho.unwrap_or(0.0);
            let range = lambda_range(lipschitz, rho)?;
            let lambda = config.lambda.unwrap_or_else(|| range.midpoint());
            let ls = range.ls_at(lambda)?;
            let omega = config.omega.unwrap_or(1.0);
            let params = crate::solvers::derive_rcog_params(omega, 0.0, &vec![ls; n], &dist)?;
            let mut sim = FedOgSim::new(problem, params, lambda, dist.clone(), &x0)?;
            let fbfs = if config.lyapunov {
                Some(FbfsOperator::new(problem, lambda)?)
            } else {
                None
            };
            let star = match &fbfs {
                Some(op) => Some(op.known_zero()?),
                None => None,
            };
            let mut prev_point = sim.product_point()?;
            for round in 0..=config.rounds {
                let cur_point = sim.product_point()?;
                let lyapunov = match (&fbfs, &star) {
                    (Some(op), Some(star)) => {
                        let g_prev = op.eval_full(&prev_point);
                        Some(
                            crate::diagnostics::rcog_lyapunov(
                                &cur_point,
                                &prev_point,
                                &g_prev,
                                star,
                                &params,
                                &crate::blockcore::WeightVector::ones(n),
                            )?
                            .value,
                        )
                    }
                    _ => None,
                };
                rows.push(FederatedRow {
                    round,
                    sampled_user: if round == 0 {
                        None
                    } else {
                        Some(messages[messages.len() - 1].user)
                    },
                    certificate_residual: sim.certificate(),
                    lyapunov,
                    cumulative_bytes,
                });
                if round == config.rounds {
                    break;
                }
                let i_k = stream.next_block(&dist);
                prev_point = cur_point;
                let round_messages = sim.round(i_k)?;
                cumulative_bytes += round_messages.iter().map(|m| m.bytes).sum::<usize>();
                messages.extend(round_messages);
            }
        }
        FederatedAlgorithm::AcFedDr => {
            let beta = config.beta.unwrap_or(1.0);
            let nu = config.nu.unwrap_or(4.0);
            let schedule = ArcogSchedule::new(nu)?;
            let omega = config.omega.unwrap_or_else(|| beta * dist.p_min());
            let mut sim = AcFedDrSim::new(problem, schedule, omega, beta, dist.clone(), &x0)?;
            let drs = if config.lyapunov {
                Some(DrsOperator::new(problem, beta)?)
            } else {
                None
            };
            let star = match &drs {
                Some(op) => Some(op.known_zero()?),
                None => None,
            };
            let betas = vec![beta; n];
            let mut prev_point = sim.reconstruct_users()?;
            for round in 0..=config.rounds {
                let cur_point = sim.reconstruct_users()?;
                let lyapunov = match (&drs, &star) {
                    (Some(op), Some(star)) => {
                        let g_prev = op.eval_full(&prev_point);
                        let point = schedule.at(round as i64);
                        let eta_prev = schedule.at(round as i64 - 1).eta;
                        Some(
                            crate::diagnostics::arcog_lyapunov(
                                &cur_point,
                                &prev_point,
                                &g_prev,
                                star,
                                &betas,
                                omega,
                                point.t_cur,
                                eta_prev,
                                1.0,
                            )?
                            .value,
                        )
                    }
                    _ => None,
                };
                rows.push(FederatedRow {
                    round,
                    sampled_user: if round == 0 {
                        None
                    } else {
                        Some(messages[messages.len() - 1].user)
                    },
                    certificate_residual: sim.certificate()?,
                    lyapunov,
                    cumulative_bytes,
                });
                if round == config.rounds {
                    break;
                }
                let i_k = stream.next_block(&dist);
                prev_point = cur_point;
                let round_messages = sim.round(i_k)?;
                cumulative_bytes += round_messages.iter().map(|m| m.bytes).sum::<usize>();
                messages.extend(round_messages);
            }
        }
    }
    Ok(FederatedOutcome {
        trace: FederatedTrace {
            seed: config.seed,
            rows,
        },
        messages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockcore::IndexStream;
    use crate::solvers::{arcog_step_direct, rcog_step};
    use nalgebra::{DMatrix, DVector};

    fn random_vec(stream: &mut IndexStream, len: usize, scale: f64) -> Vec<f64> {
        (0..len)
            .map(|_| scale * (2.0 * stream.next_uniform() - 1.0))
            .collect()
    }

    fn random_spd(stream: &mut IndexStream, dim: usize, lo: f64, hi: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(dim, dim, |_, _| 2.0 * stream.next_uniform() - 1.0);
        let q = a.qr().q();
        let eigs = DVector::from_fn(dim, |i, _| lo + (hi - lo) * (i as f64 + 0.5) / dim as f64);
        &q * DMatrix::from_diagonal(&eigs) * q.transpose()
    }

    fn monotone_problem(seed: u64, n: usize, dim: usize) -> SplitProblem {
        let mut stream = IndexStream::new(seed);
        let ms: Vec<DMatrix<f64>> = (0..n)
            .map(|_| random_spd(&mut stream, dim, 0.2, 1.2))
            .collect();
        let bs: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_column_slice(&random_vec(&mut stream, dim, 0.5)))
            .collect();
        let central = random_spd(&mut stream, dim, 0.1, 0.8);
        let x_star = random_vec(&mut stream, dim, 1.0);
        SplitProblem::affine_with_solution(ms, bs, central, x_star).unwrap()
    }

    fn fedog_setup(problem: &SplitProblem) -> (RcogParams, f64, BlockDistribution) {
        let n = problem.num_users();
        let dist = BlockDistribution::uniform(n).unwrap();
        let range = lambda_range(problem.certificates().lipschitz.unwrap(), 0.0).unwrap();
        let lambda = range.midpoint();
        let ls = range.ls_at(lambda).unwrap();
        let params = crate::solvers::derive_rcog_params(1.0, 0.0, &vec![ls; n], &dist).unwrap();
        (params, lambda, dist)
    }

    #[test]
    fn fedog_static_at_solution() {
        let problem = monotone_problem(1, 4, 3);
        let (params, lambda, dist) = fedog_setup(&problem);
        let x_star = problem.solution().unwrap();
        let mut sim = FedOgSim::new(&problem, params, lambda, dist.clone(), &x_star).unwrap();
        let before = sim.product_point().unwrap();
        let mut stream = IndexStream::new(5);
        for _ in 0..20 {
            let i = stream.next_block(&dist);
            sim.round(i).unwrap();
        }
        let after = sim.product_point().unwrap();
        let dev = after.dist_sq(&before).sqrt();
        assert!(dev <= 1e-10, "drifted {dev} from the solution");
        assert!(sim.certificate() <= 1e-18);
    }

    #[test]
    fn fedog_matches_reference_kernel() {
        let problem = monotone_problem(2, 6, 4);
        let (params, lambda, dist) = fedog_setup(&problem);
        let x0 = vec![0.0; 4];
        let mut sim = FedOgSim::new(&problem, params, lambda, dist.clone(), &x0).unwrap();

        let fbfs = FbfsOperator::new(&problem, lambda).unwrap();
        let x0_prod = crate::splitting::replicate(&x0, 6).unwrap();
        let mut cur = x0_prod.clone();
        let mut prev = x0_prod;

        let mut stream = IndexStream::new(11);
        for k in 0..500 {
            let i = stream.next_block(&dist);
            sim.round(i).unwrap();
            let next = rcog_step(&cur, &prev, &fbfs, &params, &dist, i).unwrap();
            prev = cur;
            cur = next;
            let sim_point = sim.product_point().unwrap();
            let dev = sim_point.dist_sq(&cur).sqrt() / (1.0 + cur.norm_sq().sqrt());
            assert!(dev <= 1e-10, "deviation {dev} at round {k}");
            assert!(sim.mean_drift() <= 1e-12, "mean drift at round {k}");
        }
    }

    #[test]
    fn acfeddr_static_at_zero() {
        let problem = monotone_problem(3, 4, 3);
        let dist = BlockDistribution::uniform(4).unwrap();
        let beta = 1.0;
        let schedule = ArcogSchedule::new(4.0).unwrap();
        let omega = beta * dist.p_min();
        // Start every user's summand at the residual-operator zero.
        let drs = DrsOperator::new(&problem, beta).unwrap();
        let u_star = drs.known_zero().unwrap();
        // A consensus start cannot express per-user differences, so instead
        // verify the certificate stays at zero when starting from the zero
        // of the lifted operator expressed through z slots directly.
        let mut sim =
            AcFedDrSim::new(&problem, schedule, omega, beta, dist.clone(), &[0.0; 3]).unwrap();
        for (i, user) in sim.users.iter_mut().enumerate() {
            user.z_cur.copy_from_slice(u_star.block(i));
            user.z_prev.copy_from_slice(u_star.block(i));
        }
        sim.server.z_bar = crate::splitting::component_mean(&u_star);
        let arg = sim.server.z_bar.clone();
        sim.server.u_hat_cur = sim.b_resolvent.apply(&arg).unwrap();
        sim.server.u_hat_prev = sim.server.u_hat_cur.clone();

        let before = sim.reconstruct_users().unwrap();
        let mut stream = IndexStream::new(13);
        for _ in 0..30 {
            let i = stream.next_block(&dist);
            sim.round(i).unwrap();
        }
        let after = sim.reconstruct_users().unwrap();
        let dev = after.dist_sq(&before).sqrt() / (1.0 + before.norm_sq().sqrt());
        assert!(dev <= 1e-9, "drifted {dev} from the zero");
        assert!(sim.certificate().unwrap() <= 1e-16);
    }

    #[test]
    fn acfeddr_matches_reference_kernel() {
        let problem = monotone_problem(4, 5, 3);
        let dist = BlockDistribution::uniform(5).unwrap();
        let beta = 1.0;
        let schedule = ArcogSchedule::new(4.0).unwrap();
        let omega = beta * dist.p_min();
        let u0 = vec![0.2; 3];
        let mut sim = AcFedDrSim::new(&problem, schedule, omega, beta, dist.clone(), &u0).unwrap();

        let drs = DrsOperator::new(&problem, beta).unwrap();
        let u0_prod = crate::splitting::replicate(&u0, 5).unwrap();
        let mut cur = u0_prod.clone();
        let mut prev = u0_prod;

        let mut stream = IndexStream::new(17);
        for k in 0..600i64 {
            let i = stream.next_block(&dist);
            sim.round(i).unwrap();
            let next =
                arcog_step_direct(&cur, &prev, &drs, &schedule.at(k), omega, &dist, i).unwrap();
            prev = cur;
            cur = next;
            let sim_point = sim.reconstruct_users().unwrap();
            let dev = sim_point.dist_sq(&cur).sqrt() / (1.0 + cur.norm_sq().sqrt());
            assert!(dev <= 1e-8, "deviation {dev} at round {k}");
            assert!(
                sim.mean_drift().unwrap() <= 1e-12,
                "mean drift at round {k}"
            );
            assert!(
                sim.u_hat_drift().unwrap() <= 1e-12,
                "u_hat drift at round {k}"
            );
        }
        assert!(!sim.rebase_log.is_empty(), "state rebasing never exercised");
    }

    #[test]
    fn run_federated_zero_rounds_and_determinism() {
        let problem = monotone_problem(5, 3, 2);
        let mut config = FederatedConfig::new(FederatedAlgorithm::FedOg, 0, 7);
        let outcome = run_federated(&problem, &config).unwrap();
        assert_eq!(outcome.trace.rows.len(), 1);
        assert!(outcome.messages.is_empty());

        config.rounds = 100;
        let a = run_federated(&problem, &config).unwrap();
        let b = run_federated(&problem, &config).unwrap();
        assert_eq!(a.trace, b.trace);

        let mut config = FederatedConfig::new(FederatedAlgorithm::AcFedDr, 100, 7);
        let a = run_federated(&problem, &config).unwrap();
        let b = run_federated(&problem, &config).unwrap();
        assert_eq!(a.trace, b.trace);
        config.seed = 8;
        let c = run_federated(&problem, &config).unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn lyapunov_recording_yields_nonnegative_values() {
        let problem = monotone_problem(10, 4, 2);
        for algorithm in [FederatedAlgorithm::FedOg, FederatedAlgorithm::AcFedDr] {
            let mut config = FederatedConfig::new(algorithm, 50, 4);
            config.lyapunov = true;
            let outcome = run_federated(&problem, &config).unwrap();
            for row in &outcome.trace.rows {
                let value = row.lyapunov.expect("lyapunov column requested");
                assert!(
                    value >= -1e-12,
                    "negative potential {value} at round {}",
                    row.round
                );
            }
        }
    }

    #[test]
    fn fedog_certificate_decays_along_the_run() {
        let problem = monotone_problem(9, 4, 3);
        let config = FederatedConfig::new(FederatedAlgorithm::FedOg, 3000, 2);
        let outcome = run_federated(&problem, &config).unwrap();
        let series = outcome.trace.certificate_series();
        let head: f64 = series[1..101].iter().sum::<f64>() / 100.0;
        let tail: f64 = series[series.len() - 100..].iter().sum::<f64>() / 100.0;
        assert!(
            tail < head * 0.25,
            "certificate did not decay: head {head:.3e} tail {tail:.3e}"
        );
    }

    #[test]
    fn ledger_has_privacy_shape() {
        let problem = monotone_problem(6, 4, 2);
        for algorithm in [FederatedAlgorithm::FedOg, FederatedAlgorithm::AcFedDr] {
            let config = FederatedConfig::new(algorithm, 50, 3);
            let outcome = run_federated(&problem, &config).unwrap();
            assert_eq!(outcome.messages.len(), 100);
            for pair in outcome.messages.chunks(2) {
                // Exactly one sampled user exchanges messages per round,
                // and only resolvent outputs flow down / increments flow up.
                assert_eq!(pair[0].round, pair[1].round);
                assert_eq!(pair[0].user, pair[1].user);
                assert_eq!(pair[0].direction, MessageDirection::ServerToUser);
                assert_eq!(pair[0].payload, PayloadKind::ResolventPair);
                assert_eq!(pair[1].direction, MessageDirection::UserToServer);
                assert!(matches!(
                    pair[1].payload,
                    PayloadKind::DeltaU | PayloadKind::DeltaWz
                ));
            }
        }
    }

    #[test]
    fn federated_trace_csv_schema() {
        let problem = monotone_problem(7, 3, 2);
        let config = FederatedConfig::new(FederatedAlgorithm::FedOg, 5, 1);
        let outcome = run_federated(&problem, &config).unwrap();
        let csv = outcome.trace.to_csv_with_meta(Some("deadbeef"));
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "# seed=1 config_hash=deadbeef");
        assert_eq!(
            lines.next().unwrap(),
            "round,sampled_user,certificate_residual,lyapunov,cumulative_bytes"
        );
        assert_eq!(lines.count(), 6);
        let jsonl = messages_to_jsonl(&outcome.messages).unwrap();
        assert_eq!(jsonl.lines().count(), 10);
    }
}
