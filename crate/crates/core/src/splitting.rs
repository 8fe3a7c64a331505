//! The operator-splitting layer: the consensus resolvent over the duplicated
//! product space, the forward-backward-forward residual operator, the
//! Douglas-Rachford residual operator, and the feasibility range for the
//! splitting scale.
//!
//! A finite-sum inclusion `0 in (1/n) sum_i A_i x + B x` is reformulated over
//! the product space of `n` copies of `R^p`; its residual operators expose
//! the [`BlockOp`] interface with one block per user, so every solver kernel
//! runs on them unchanged.

use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::blockcore::{BlockPartition, BlockVector};
use crate::error::{Error, Result};
use crate::operators::{FactorizedResolvent, MatrixData, ProxKind, Resolvent};

/// A point of the duplicated product space: one `R^p` component per user.
pub type ProductPoint = BlockVector;

/// The `n x p` product partition underlying [`ProductPoint`].
pub fn product_partition(n_users: usize, dim: usize) -> Result<BlockPartition> {
    BlockPartition::uniform(n_users, dim)
}

/// `[x, x, ..., x]`: the consensus embedding of a single vector.
pub fn replicate(x: &[f64], n_users: usize) -> Result<ProductPoint> {
    let part = product_partition(n_users, x.len())?;
    let mut data = Vec::with_capacity(n_users * x.len());
    for _ in 0..n_users {
        data.extend_from_slice(x);
    }
    BlockVector::new(data, part)
}

/// Componentwise mean of the product point's user components.
pub fn component_mean(u: &ProductPoint) -> Vec<f64> {
    let n = u.partition().num_blocks();
    let p = u.partition().size(0);
    let mut mean = vec![0.0; p];
    for i in 0..n {
        for (mv, uv) in mean.iter_mut().zip(u.block(i)) {
            *mv += uv;
        }
    }
    for mv in &mut mean {
        *mv /= n as f64;
    }
    mean
}

/// One per-user operator: a forward map, a resolvent, or both.
#[derive(Debug, Clone, PartialEq)]
pub enum UserOperator {
    /// `A_i(x) = M x + b`; forward map and resolvent both available.
    Affine { m: DMatrix<f64>, b: DVector<f64> },
    /// Resolvent-only operator given by a closed-form proximal map.
    Prox(ProxKind),
    /// Declared forward map with an independently supplied resolvent.
    /// The consistency check in the suite exists to catch mismatches here.
    Custom {
        m: DMatrix<f64>,
        b: DVector<f64>,
        resolvent: Resolvent,
    },
}

impl UserOperator {
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            UserOperator::Affine { m, b } | UserOperator::Custom { m, b, .. } => {
                let v = DVector::from_column_slice(x);
                Ok((m * v + b).as_slice().to_vec())
            }
            UserOperator::Prox(_) => Err(Error::MissingCertificate(
                "forward map (operator is resolvent-only)",
            )),
        }
    }

    pub fn has_forward(&self) -> bool {
        !matches!(self, UserOperator::Prox(_))
    }

    pub fn resolvent(&self) -> Resolvent {
        match self {
            UserOperator::Affine { m, b } => Resolvent::AffineMonotone {
                m: m.clone(),
                b: b.clone(),
            },
            UserOperator::Prox(kind) => Resolvent::Prox(kind.clone()),
            UserOperator::Custom { resolvent, .. } => resolvent.clone(),
        }
    }
}

/// The central operator, applied only through its resolvent.
#[derive(Debug, Clone, PartialEq)]
pub enum CentralOperator {
    Affine { m: DMatrix<f64>, b: DVector<f64> },
    Prox(ProxKind),
    Zero,
}

impl CentralOperator {
    pub fn resolvent(&self) -> Resolvent {
        match self {
            CentralOperator::Affine { m, b } => Resolvent::AffineMonotone {
                m: m.clone(),
                b: b.clone(),
            },
            CentralOperator::Prox(kind) => Resolvent::Prox(kind.clone()),
            CentralOperator::Zero => Resolvent::Prox(ProxKind::Zero),
        }
    }
}

/// Regularity data claimed for the finite-sum inclusion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitCertificates {
    /// Common Lipschitz constant of the user forward maps.
    pub lipschitz: Option<f64>,
    /// Star co-hypomonotonicity parameter of the inclusion.
    pub rho: Option<f64>,
    /// Whether every user operator and the central operator are monotone.
    pub monotone: bool,
    /// A known solution of the inclusion.
    pub solution: Option<Vec<f64>>,
}

/// The finite-sum inclusion data: `n` user operators, one central operator,
/// and the certificates under which the solvers' guarantees apply.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitProblem {
    users: Vec<UserOperator>,
    central: CentralOperator,
    dim: usize,
    certificates: SplitCertificates,
}

impl SplitProblem {
    pub fn new(
        users: Vec<UserOperator>,
        central: CentralOperator,
        dim: usize,
        certificates: SplitCertificates,
    ) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::InvalidPartition("no users".into()));
        }
        let check_dims = |m: &DMatrix<f64>, b: &DVector<f64>| -> Result<()> {
            if m.nrows() != dim || m.ncols() != dim || b.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.nrows(),
                });
            }
            Ok(())
        };
        for u in &users {
            match u {
                UserOperator::Affine { m, b } | UserOperator::Custom { m, b, .. } => {
                    check_dims(m, b)?
                }
                UserOperator::Prox(_) => {}
            }
        }
        if let CentralOperator::Affine { m, b } = &central {
            check_dims(m, b)?;
        }
        if let Some(sol) = &certificates.solution {
            if sol.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: sol.len(),
                });
            }
        }
        Ok(Self {
            users,
            central,
            dim,
            certificates,
        })
    }

    /// Affine instance with the central offset balanced so that `x_star`
    /// solves the inclusion exactly; certificates are filled from exact
    /// linear algebra.
    pub fn affine_with_solution(
        user_ms: Vec<DMatrix<f64>>,
        user_bs: Vec<DVector<f64>>,
        central_m: DMatrix<f64>,
        x_star: Vec<f64>,
    ) -> Result<Self> {
        if user_ms.len() != user_bs.len() || user_ms.is_empty() {
            return Err(Error::InvalidPartition(
                "user matrix/offset count mismatch".into(),
            ));
        }
        let dim = x_star.len();
        let n = user_ms.len();
        let xs = DVector::from_column_slice(&x_star);
        let mut mean_a = DVector::zeros(dim);
        let mut lipschitz: f64 = 0.0;
        let mut monotone = true;
        for (m, b) in user_ms.iter().zip(&user_bs) {
            mean_a += (m * &xs + b) / n as f64;
            let sv = m.clone().singular_values();
            lipschitz = lipschitz.max(sv.iter().cloned().fold(0.0, f64::max));
            let sym = m + m.transpose();
            let min_eig = sym
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min_eig < -1e-10 * (1.0 + lipschitz) {
                monotone = false;
            }
        }
        {
            let sym = &central_m + central_m.transpose();
            let min_eig = sym
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min_eig < -1e-10 {
                monotone = false;
            }
        }
        // 0 = mean_i A_i x* + B x*  fixes the central offset.
        let central_b = -(&mean_a) - &central_m * &xs;
        let users = user_ms
            .into_iter()
            .zip(user_bs)
            .map(|(m, b)| UserOperator::Affine { m, b })
            .collect();
        let central = CentralOperator::Affine {
            m: central_m,
            b: central_b,
        };
        let rho = if monotone { Some(0.0) } else { None };
        Self::new(
            users,
            central,
            dim,
            SplitCertificates {
                lipschitz: Some(lipschitz),
                rho,
                monotone,
                solution: Some(x_star),
            },
        )
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn users(&self) -> &[UserOperator] {
        &self.users
    }

    pub fn central(&self) -> &CentralOperator {
        &self.central
    }

    pub fn certificates(&self) -> &SplitCertificates {
        &self.certificates
    }

    pub fn solution(&self) -> Result<Vec<f64>> {
        self.certificates
            .solution
            .clone()
            .ok_or(Error::MissingSolution)
    }

    pub fn partition(&self) -> Result<BlockPartition> {
        product_partition(self.users.len(), self.dim)
    }

    /// `A_i x` for user `i`; errors when that user is resolvent-only.
    pub fn user_forward(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.users[i].forward(x)
    }

    pub fn user_resolvent(&self, i: usize, v: &[f64], scale: f64) -> Result<Vec<f64>> {
        self.users[i].resolvent().apply(v, scale)
    }

    pub fn central_resolvent(&self, v: &[f64], scale: f64) -> Result<Vec<f64>> {
        self.central.resolvent().apply(v, scale)
    }

    /// Worst residual of `J_{lambda A_i}(y + lambda A_i y) = y` over sampled
    /// points, for users that expose both a forward map and a resolvent.
    pub fn forward_resolvent_consistency(&self, lambda: f64, points: &[Vec<f64>]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, user) in self.users.iter().enumerate() {
            if !user.has_forward() {
                continue;
            }
            for y in points {
                let fy = self.user_forward(i, y)?;
                let arg: Vec<f64> = y.iter().zip(&fy).map(|(yv, fv)| yv + lambda * fv).collect();
                let back = self.user_resolvent(i, &arg, lambda)?;
                let err_sq: f64 = back.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                let scale = 1.0 + y.iter().map(|v| v * v).sum::<f64>().sqrt();
                worst = worst.max(err_sq.sqrt() / scale);
            }
        }
        Ok(worst)
    }
}

/// `u_hat = J_{scale B}((1/n) sum_i u_i)` together with its `n`-fold copy,
/// which is exactly the resolvent of the lifted central-plus-consensus
/// operator at `u`.
pub fn consensus_resolvent(
    u: &ProductPoint,
    scale: f64,
    problem: &SplitProblem,
) -> Result<(Vec<f64>, ProductPoint)> {
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "scale = {scale} must be > 0"
        )));
    }
    let mean = component_mean(u);
    let u_hat = problem.central_resolvent(&mean, scale)?;
    let copies = replicate(&u_hat, problem.num_users())?;
    Ok((u_hat, copies))
}

/// Feasible range of the splitting scale under `8 L rho <= 1`, with the
/// associated Lipschitz bound for the residual operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaRange {
    pub lo: f64,
    pub hi: f64,
    pub lipschitz: f64,
    pub rho: f64,
}

impl LambdaRange {
    /// Open at zero: a zero scale never defines a valid residual operator.
    pub fn contains(&self, lambda: f64) -> bool {
        lambda > 0.0 && lambda >= self.lo && lambda <= self.hi
    }

    /// Midpoint of the feasible interval, the default scale.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// `L_s = (1 + lambda L)(2 + lambda L)` at a chosen in-range scale.
    pub fn ls_at(&self, lambda: f64) -> Result<f64> {
        if !self.contains(lambda) {
            return Err(Error::LambdaOutOfRange {
                lambda,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok((1.0 + lambda * self.lipschitz) * (2.0 + lambda * self.lipschitz))
    }

    /// `rho_hat = (1 - lambda L)/(1 + lambda L)^2 - rho/lambda`, the star
    /// coefficient of the residual operator at scale `lambda`.
    pub fn rho_hat(&self, lambda: f64) -> Result<f64> {
        if !self.contains(lambda) {
            return Err(Error::LambdaOutOfRange {
                lambda,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let ll = lambda * self.lipschitz;
        Ok((1.0 - ll) / ((1.0 + ll) * (1.0 + ll)) - self.rho / lambda)
    }
}

/// `[lambda_lo, lambda_hi] = (1 - 2 rho L -/+ sqrt(1 - 8 L rho)) / (2L(1 + L rho))`,
/// requiring `8 L rho <= 1`.
pub fn lambda_range(lipschitz: f64, rho: f64) -> Result<LambdaRange> {
    if !(lipschitz > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "L = {lipschitz} must be > 0"
        )));
    }
    if rho < 0.0 {
        return Err(Error::InvalidParameter(format!("rho = {rho} must be >= 0")));
    }
    let product = 8.0 * lipschitz * rho;
    if product > 1.0 {
        return Err(Error::InfeasibleLambda { value: product });
    }
    let disc = (1.0 - product).sqrt();
    let denom = 2.0 * lipschitz * (1.0 + lipschitz * rho);
    Ok(LambdaRange {
        lo: (1.0 - 2.0 * rho * lipschitz - disc) / denom,
        hi: (1.0 - 2.0 * rho * lipschitz + disc) / denom,
        lipschitz,
        rho,
    })
}

// Two-slot cache of the consensus-resolvent output keyed by the exact input
// point; solver kernels alternate between the two most recent iterates.
#[derive(Debug, Default)]
struct UhatCache {
    slots: Mutex<(usize, [Option<(Vec<f64>, Vec<f64>)>; 2])>,
}

impl UhatCache {
    fn lookup(&self, key: &[f64]) -> Option<Vec<f64>> {
        let guard = self.slots.lock().unwrap();
        for slot in guard.1.iter().flatten() {
            if slot.0 == key {
                return Some(slot.1.clone());
            }
        }
        None
    }

    fn insert(&self, key: &[f64], value: &[f64]) {
        let mut guard = self.slots.lock().unwrap();
        let idx = guard.0;
        guard.1[idx] = Some((key.to_vec(), value.to_vec()));
        guard.0 = (idx + 1) % 2;
    }
}

/// The forward-backward-forward residual operator over the product space:
/// `[S x]_i = x_i - u_hat - lambda (A_i x_i - A_i u_hat)` with
/// `u_hat = J_{lambda B}((1/n) sum_i (x_i - lambda A_i x_i))`.
///
/// Zeros of this operator embed the inclusion's solutions. Per-block
/// evaluation reuses a cached `u_hat` per input point.
pub struct FbfsOperator<'a> {
    problem: &'a SplitProblem,
    lambda: f64,
    partition: BlockPartition,
    b_resolvent: FactorizedResolvent,
    cache: UhatCache,
}

impl<'a> FbfsOperator<'a> {
    pub fn new(problem: &'a SplitProblem, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda = {lambda} must be > 0"
            )));
        }
        for (i, u) in problem.users().iter().enumerate() {
            if !u.has_forward() {
                return Err(Error::Config(format!(
                    "user {i} has no forward map; the forward-backward-forward operator needs one"
                )));
            }
        }
        let partition = problem.partition()?;
        let b_resolvent = problem.central().resolvent().factorize(lambda)?;
        Ok(Self {
            problem,
            lambda,
            partition,
            b_resolvent,
            cache: UhatCache::default(),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn problem(&self) -> &SplitProblem {
        self.problem
    }

    /// The consensus-resolvent output for this input point, cached.
    pub fn u_hat(&self, x: &ProductPoint) -> Result<Vec<f64>> {
        if let Some(hit) = self.cache.lookup(x.as_slice()) {
            return Ok(hit);
        }
        let n = self.problem.num_users();
        let p = self.problem.dim();
        let mut mean = vec![0.0; p];
        for i in 0..n {
            let xi = x.block(i);
            let axi = self.problem.user_forward(i, xi)?;
            for ((mv, xv), av) in mean.iter_mut().zip(xi).zip(&axi) {
                *mv += xv - self.lambda * av;
            }
        }
        for mv in &mut mean {
            *mv /= n as f64;
        }
        let u_hat = self.b_resolvent.apply(&mean)?;
        self.cache.insert(x.as_slice(), &u_hat);
        Ok(u_hat)
    }

    fn block_with_uhat(&self, x: &ProductPoint, i: usize, u_hat: &[f64]) -> Result<Vec<f64>> {
        let xi = x.block(i);
        let axi = self.problem.user_forward(i, xi)?;
        let au = self.problem.user_forward(i, u_hat)?;
        Ok(xi
            .iter()
            .zip(u_hat)
            .zip(axi.iter().zip(&au))
            .map(|((xv, uv), (av, bv))| xv - uv - self.lambda * (av - bv))
            .collect())
    }

    /// The consensus embedding of the known solution, when one is attached.
    pub fn known_zero(&self) -> Result<ProductPoint> {
        let x_star = self.problem.solution()?;
        replicate(&x_star, self.problem.num_users())
    }
}

impl crate::operators::BlockOp for FbfsOperator<'_> {
    fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    fn eval_block(&self, x: &BlockVector, i: usize) -> Vec<f64> {
        let u_hat = self.u_hat(x).expect("residual-operator evaluation failed");
        self.block_with_uhat(x, i, &u_hat)
            .expect("residual-operator evaluation failed")
    }

    fn eval_full(&self, x: &BlockVector) -> BlockVector {
        let u_hat = self.u_hat(x).expect("residual-operator evaluation failed");
        let mut out = BlockVector::zeros(self.partition.clone());
        for i in 0..self.partition.num_blocks() {
            let v = self
                .block_with_uhat(x, i, &u_hat)
                .expect("residual-operator evaluation failed");
            out.block_mut(i).copy_from_slice(&v);
        }
        out
    }
}

/// One-shot application of the forward-backward-forward operator.
pub fn fbfs_apply(x: &ProductPoint, lambda: f64, problem: &SplitProblem) -> Result<ProductPoint> {
    let op = FbfsOperator::new(problem, lambda)?;
    Ok(crate::operators::BlockOp::eval_full(&op, x))
}

/// Star-inequality report at one trial point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarCheckReport {
    /// `<S x, x - x*> - rho_hat ||S x||^2`
    pub margin: f64,
    pub rho_hat: f64,
    pub pass: bool,
}

/// Asserts `<S x, x - x*> >= rho_hat ||S x||^2 - 1e-10 * scale` at `x`.
pub fn fbfs_star_check(
    x: &ProductPoint,
    lambda: f64,
    problem: &SplitProblem,
    x_star: &ProductPoint,
) -> Result<StarCheckReport> {
    let lipschitz = problem
        .certificates()
        .lipschitz
        .ok_or(Error::MissingCertificate("common Lipschitz constant"))?;
    let rho = problem
        .certificates()
        .rho
        .ok_or(Error::MissingCertificate("rho"))?;
    let range = lambda_range(lipschitz, rho)?;
    let rho_hat = range.rho_hat(lambda)?;
    let s = fbfs_apply(x, lambda, problem)?;
    let mut inner = 0.0;
    for ((sv, xv), tv) in s.as_slice().iter().zip(x.as_slice()).zip(x_star.as_slice()) {
        inner += sv * (xv - tv);
    }
    let s_sq = s.norm_sq();
    let margin = inner - rho_hat * s_sq;
    let scale = 1.0 + inner.abs() + rho_hat.abs() * s_sq;
    Ok(StarCheckReport {
        margin,
        rho_hat,
        pass: margin >= -1e-10 * scale,
    })
}

/// The Douglas-Rachford residual operator over the product space:
/// `[G u]_i = (1/beta) (u_hat - J_{beta A_i}(2 u_hat - u_i))` with
/// `u_hat = J_{beta B}((1/n) sum_i u_i)`.
///
/// It is `beta`-co-coercive for monotone data, and its zeros map to
/// inclusion solutions through the consensus resolvent.
pub struct DrsOperator<'a> {
    problem: &'a SplitProblem,
    beta: f64,
    partition: BlockPartition,
    b_resolvent: FactorizedResolvent,
    user_resolvents: Vec<FactorizedResolvent>,
    cache: UhatCache,
}

impl<'a> DrsOperator<'a> {
    pub fn new(problem: &'a SplitProblem, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta = {beta} must be > 0"
            )));
        }
        let partition = problem.partition()?;
        let b_resolvent = problem.central().resolvent().factorize(beta)?;
        let user_resolvents = problem
            .users()
            .iter()
            .map(|u| u.resolvent().factorize(beta))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            problem,
            beta,
            partition,
            b_resolvent,
            user_resolvents,
            cache: UhatCache::default(),
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn problem(&self) -> &SplitProblem {
        self.problem
    }

    pub fn u_hat(&self, u: &ProductPoint) -> Result<Vec<f64>> {
        if let Some(hit) = self.cache.lookup(u.as_slice()) {
            return Ok(hit);
        }
        let mean = component_mean(u);
        let u_hat = self.b_resolvent.apply(&mean)?;
        self.cache.insert(u.as_slice(), &u_hat);
        Ok(u_hat)
    }

    fn block_with_uhat(&self, u: &ProductPoint, i: usize, u_hat: &[f64]) -> Result<Vec<f64>> {
        let ui = u.block(i);
        let reflected: Vec<f64> = u_hat.iter().zip(ui).map(|(hv, uv)| 2.0 * hv - uv).collect();
        let ji = self.user_resolvents[i].apply(&reflected)?;
        Ok(u_hat
            .iter()
            .zip(&ji)
            .map(|(hv, jv)| (hv - jv) / self.beta)
            .collect())
    }

    /// For affine users with a known inclusion solution `x*`, the zero
    /// `u*_i = x* - beta A_i x*` of the residual operator.
    pub fn known_zero(&self) -> Result<ProductPoint> {
        let x_star = self.problem.solution()?;
        let n = self.problem.num_users();
        let part = self.partition.clone();
        let mut data = Vec::with_capacity(n * x_star.len());
        for i in 0..n {
            let a = self.problem.user_forward(i, &x_star)?;
            for (xv, av) in x_star.iter().zip(&a) {
                data.push(xv - self.beta * av);
            }
        }
        BlockVector::new(data, part)
    }
}

impl crate::operators::BlockOp for DrsOperator<'_> {
    fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    fn eval_block(&self, u: &BlockVector, i: usize) -> Vec<f64> {
        let u_hat = self.u_hat(u).expect("residual-operator evaluation failed");
        self.block_with_uhat(u, i, &u_hat)
            .expect("residual-operator evaluation failed")
    }

    fn eval_full(&self, u: &BlockVector) -> BlockVector {
        let u_hat = self.u_hat(u).expect("residual-operator evaluation failed");
        let mut out = BlockVector::zeros(self.partition.clone());
        for i in 0..self.partition.num_blocks() {
            let v = self
                .block_with_uhat(u, i, &u_hat)
                .expect("residual-operator evaluation failed");
            out.block_mut(i).copy_from_slice(&v);
        }
        out
    }
}

/// One-shot application of the Douglas-Rachford residual operator.
pub fn drs_apply(u: &ProductPoint, beta: f64, problem: &SplitProblem) -> Result<ProductPoint> {
    let op = DrsOperator::new(problem, beta)?;
    Ok(crate::operators::BlockOp::eval_full(&op, u))
}

/// Graph-pair certificate: given `(x_i, v_i)` with `v_i in A_i x_i`, forms
/// `u_i = x_i - lambda v_i`, `u_hat = J_{lambda B}(mean u)`, and the residual
/// `sum_i ||x_i - u_hat||^2`, which vanishes exactly at solutions.
pub fn solution_certificate_a(
    xs: &[Vec<f64>],
    vs: &[Vec<f64>],
    lambda: f64,
    problem: &SplitProblem,
) -> Result<(Vec<f64>, f64)> {
    let n = problem.num_users();
    if xs.len() != n || vs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: xs.len().min(vs.len()),
        });
    }
    let p = problem.dim();
    let mut mean = vec![0.0; p];
    for (x, v) in xs.iter().zip(vs) {
        for ((mv, xv), vv) in mean.iter_mut().zip(x).zip(v) {
            *mv += xv - lambda * vv;
        }
    }
    for mv in &mut mean {
        *mv /= n as f64;
    }
    let u_hat = problem.central_resolvent(&mean, lambda)?;
    let mut residual = 0.0;
    for x in xs {
        for (xv, hv) in x.iter().zip(&u_hat) {
            residual += (xv - hv) * (xv - hv);
        }
    }
    Ok((u_hat, residual))
}

/// Reflected-resolvent certificate: `u_hat = J_{lambda B}(mean u)` and the
/// residual `sum_i ||u_hat - J_{lambda A_i}(2 u_hat - u_i)||^2`, which equals
/// `lambda^2 ||G u||^2` for the residual operator at the same scale.
pub fn solution_certificate_b(
    u: &ProductPoint,
    lambda: f64,
    problem: &SplitProblem,
) -> Result<(Vec<f64>, f64)> {
    let (u_hat, _) = consensus_resolvent(u, lambda, problem)?;
    let mut residual = 0.0;
    for i in 0..problem.num_users() {
        let ui = u.block(i);
        let reflected: Vec<f64> = u_hat.iter().zip(ui).map(|(hv, uv)| 2.0 * hv - uv).collect();
        let ji = problem.user_resolvent(i, &reflected, lambda)?;
        for (hv, jv) in u_hat.iter().zip(&ji) {
            residual += (hv - jv) * (hv - jv);
        }
    }
    Ok((u_hat, residual))
}

// ---------------------------------------------------------------------------
// Serialization mirrors.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
enum UserOperatorData {
    Affine {
        m: MatrixData,
        b: Vec<f64>,
    },
    Prox {
        prox: ProxKind,
    },
    Custom {
        m: MatrixData,
        b: Vec<f64>,
        resolvent: ResolventData,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
enum ResolventData {
    AffineMonotone { m: MatrixData, b: Vec<f64> },
    Prox { prox: ProxKind },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
enum CentralOperatorData {
    Affine { m: MatrixData, b: Vec<f64> },
    Prox { prox: ProxKind },
    Zero,
}

/// On-disk form of a [`SplitProblem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitProblemData {
    dim: usize,
    users: Vec<UserOperatorData>,
    central: CentralOperatorData,
    certificates: SplitCertificates,
}

fn resolvent_to_data(r: &Resolvent) -> ResolventData {
    match r {
        Resolvent::AffineMonotone { m, b } => ResolventData::AffineMonotone {
            m: MatrixData::from_matrix(m),
            b: b.as_slice().to_vec(),
        },
        Resolvent::Prox(kind) => ResolventData::Prox { prox: kind.clone() },
    }
}

fn resolvent_from_data(r: &ResolventData) -> Result<Resolvent> {
    Ok(match r {
        ResolventData::AffineMonotone { m, b } => Resolvent::AffineMonotone {
            m: m.to_matrix()?,
            b: DVector::from_column_slice(b),
        },
        ResolventData::Prox { prox } => Resolvent::Prox(prox.clone()),
    })
}

impl SplitProblem {
    pub fn to_data(&self) -> SplitProblemData {
        let users = self
            .users
            .iter()
            .map(|u| match u {
                UserOperator::Affine { m, b } => UserOperatorData::Affine {
                    m: MatrixData::from_matrix(m),
                    b: b.as_slice().to_vec(),
                },
                UserOperator::Prox(kind) => UserOperatorData::Prox { prox: kind.clone() },
                UserOperator::Custom { m, b, resolvent } => UserOperatorData::Custom {
                    m: MatrixData::from_matrix(m),
                    b: b.as_slice().to_vec(),
                    resolvent: resolvent_to_data(resolvent),
                },
            })
            .collect();
        let central = match &self.central {
            CentralOperator::Affine { m, b } => CentralOperatorData::Affine {
                m: MatrixData::from_matrix(m),
                b: b.as_slice().to_vec(),
            },
            CentralOperator::Prox(kind) => CentralOperatorData::Prox { prox: kind.clone() },
            CentralOperator::Zero => CentralOperatorData::Zero,
        };
        SplitProblemData {
            dim: self.dim,
            users,
            central,
            certificates: self.certificates.clone(),
        }
    }

    pub fn from_data(data: &SplitProblemData) -> Result<Self> {
        let users = data
            .users
            .iter()
            .map(|u| {
                Ok(match u {
                    UserOperatorData::Affine { m, b } => UserOperator::Affine {
                        m: m.to_matrix()?,
                        b: DVector::from_column_slice(b),
                    },
                    UserOperatorData::Prox { prox } => UserOperator::Prox(prox.clone()),
                    UserOperatorData::Custom { m, b, resolvent } => UserOperator::Custom {
                        m: m.to_matrix()?,
                        b: DVector::from_column_slice(b),
                        resolvent: resolvent_from_data(resolvent)?,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let central = match &data.central {
            CentralOperatorData::Affine { m, b } => CentralOperator::Affine {
                m: m.to_matrix()?,
                b: DVector::from_column_slice(b),
            },
            CentralOperatorData::Prox { prox } => CentralOperator::Prox(prox.clone()),
            CentralOperatorData::Zero => CentralOperator::Zero,
        };
        SplitProblem::new(users, central, data.dim, data.certificates.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_data())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let data: SplitProblemData = serde_json::from_str(text)?;
        Self::from_data(&data)
    }
}
