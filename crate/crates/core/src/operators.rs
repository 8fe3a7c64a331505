//! Operator and resolvent abstractions, synthetic problem generators with
//! known solutions, and certificate checkers for the regularity assumptions
//! the solvers rely on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::blockcore::{BlockPartition, BlockVector};
use crate::error::{Error, Result};

/// Evaluation interface shared by concrete operators and the splitting-layer
/// residual operators, so every solver kernel can run on either.
pub trait BlockOp {
    fn partition(&self) -> &BlockPartition;

    /// Block `i` of `Gx`.
    fn eval_block(&self, x: &BlockVector, i: usize) -> Vec<f64>;

    /// The full vector `Gx`.
    fn eval_full(&self, x: &BlockVector) -> BlockVector {
        let part = self.partition().clone();
        let mut out = BlockVector::zeros(part);
        for i in 0..self.partition().num_blocks() {
            let gi = self.eval_block(x, i);
            out.block_mut(i).copy_from_slice(&gi);
        }
        out
    }
}

/// Regularity constants an operator claims about itself. Generators fill
/// these from exact linear algebra; user-supplied values are sample-checked.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorCertificates {
    /// Per-block Lipschitz constants `L_i`.
    pub lipschitz: Option<Vec<f64>>,
    /// Per-block co-coercivity constants (the largest valid values).
    pub cocoercivity: Option<Vec<f64>>,
    /// Weak-Minty parameter `rho` relative to the known solution.
    pub weak_minty: Option<f64>,
    /// A known root of the operator.
    pub solution: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    /// `[Gx]_i = Q_i (x_i - x*_i)` with symmetric PSD blocks.
    SeparableQuadratic {
        blocks: Vec<DMatrix<f64>>,
        x_star: DVector<f64>,
    },
    /// `Gx = M x - b`.
    Linear { m: DMatrix<f64>, b: DVector<f64> },
    /// `Gx = 0`.
    Zero,
}

/// A block-structured operator `G` together with its declared certificates.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperator {
    partition: BlockPartition,
    kind: OperatorKind,
    certificates: OperatorCertificates,
}

impl BlockOperator {
    pub fn new(
        partition: BlockPartition,
        kind: OperatorKind,
        certificates: OperatorCertificates,
    ) -> Result<Self> {
        let p = partition.dim();
        match &kind {
            OperatorKind::SeparableQuadratic { blocks, x_star } => {
                if blocks.len() != partition.num_blocks() {
                    return Err(Error::DimensionMismatch {
                        expected: partition.num_blocks(),
                        got: blocks.len(),
                    });
                }
                for (i, q) in blocks.iter().enumerate() {
                    if q.nrows() != partition.size(i) || q.ncols() != partition.size(i) {
                        return Err(Error::InvalidPartition(format!(
                            "block matrix {i} is {}x{}, expected {}",
                            q.nrows(),
                            q.ncols(),
                            partition.size(i)
                        )));
                    }
                }
                if x_star.len() != p {
                    return Err(Error::DimensionMismatch {
                        expected: p,
                        got: x_star.len(),
                    });
                }
            }
            OperatorKind::Linear { m, b } => {
                if m.nrows() != p || m.ncols() != p {
                    return Err(Error::DimensionMismatch {
                        expected: p,
                        got: m.nrows(),
                    });
                }
                if b.len() != p {
                    return Err(Error::DimensionMismatch {
                        expected: p,
                        got: b.len(),
                    });
                }
            }
            OperatorKind::Zero => {}
        }
        if let Some(sol) = &certificates.solution {
            if sol.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: sol.len(),
                });
            }
        }
        Ok(Self {
            partition,
            kind,
            certificates,
        })
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn certificates(&self) -> &OperatorCertificates {
        &self.certificates
    }

    pub fn certificates_mut(&mut self) -> &mut OperatorCertificates {
        &mut self.certificates
    }

    /// The known root, as a `BlockVector`, when one is attached.
    pub fn solution(&self) -> Result<BlockVector> {
        let sol = self
            .certificates
            .solution
            .as_ref()
            .ok_or(Error::MissingSolution)?;
        BlockVector::new(sol.clone(), self.partition.clone())
    }

    pub fn lipschitz(&self) -> Result<&[f64]> {
        self.certificates
            .lipschitz
            .as_deref()
            .ok_or(Error::MissingCertificate("per-block Lipschitz constants"))
    }

    pub fn cocoercivity(&self) -> Result<&[f64]> {
        self.certificates
            .cocoercivity
            .as_deref()
            .ok_or(Error::MissingCertificate(
                "per-block co-coercivity constants",
            ))
    }
}

impl BlockOp for BlockOperator {
    fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    fn eval_block(&self, x: &BlockVector, i: usize) -> Vec<f64> {
        match &self.kind {
            OperatorKind::SeparableQuadratic { blocks, x_star } => {
                let q = &blocks[i];
                let range = self.partition.range(i);
                let xi = x.block(i);
                let si = &x_star.as_slice()[range];
                let mut out = vec![0.0; xi.len()];
                for (c, col) in q.column_iter().enumerate() {
                    let d = xi[c] - si[c];
                    for (r, val) in col.iter().enumerate() {
                        out[r] += val * d;
                    }
                }
                out
            }
            OperatorKind::Linear { m, b } => {
                let range = self.partition.range(i);
                let xs = x.as_slice();
                let mut out: Vec<f64> = range.clone().map(|r| -b[r]).collect();
                for (c, col) in m.column_iter().enumerate() {
                    let xc = xs[c];
                    for (r_local, r) in range.clone().enumerate() {
                        out[r_local] += col[r] * xc;
                    }
                }
                out
            }
            OperatorKind::Zero => vec![0.0; self.partition.size(i)],
        }
    }

    fn eval_full(&self, x: &BlockVector) -> BlockVector {
        match &self.kind {
            OperatorKind::Linear { m, b } => {
                let v = DVector::from_column_slice(x.as_slice());
                let g = m * v - b;
                BlockVector::new(g.as_slice().to_vec(), self.partition.clone())
                    .expect("dimensions checked at construction")
            }
            _ => {
                let mut out = BlockVector::zeros(self.partition.clone());
                for i in 0..self.partition.num_blocks() {
                    let gi = self.eval_block(x, i);
                    out.block_mut(i).copy_from_slice(&gi);
                }
                out
            }
        }
    }
}

fn max_asymmetry(q: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..q.nrows() {
        for c in (r + 1)..q.ncols() {
            worst = worst.max((q[(r, c)] - q[(c, r)]).abs());
        }
    }
    worst
}

fn symmetric_eigenvalues(q: &DMatrix<f64>) -> DVector<f64> {
    q.clone().symmetric_eigen().eigenvalues
}

/// Largest singular value of a (not necessarily square) dense matrix.
fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Builds `[Gx]_i = Q_i (x_i - x*_i)` from symmetric PSD blocks.
///
/// Declares `L_i = lambda_max(Q_i)` and co-coercivity `1 / lambda_max(Q_i)`;
/// both are exact for this separable construction.
pub fn make_separable_cocoercive(
    partition: BlockPartition,
    blocks: Vec<DMatrix<f64>>,
    x_star: Vec<f64>,
) -> Result<BlockOperator> {
    if blocks.len() != partition.num_blocks() {
        return Err(Error::DimensionMismatch {
            expected: partition.num_blocks(),
            got: blocks.len(),
        });
    }
    let mut lipschitz = Vec::with_capacity(blocks.len());
    let mut cocoercivity = Vec::with_capacity(blocks.len());
    for (i, q) in blocks.iter().enumerate() {
        let scale = 1.0 + spectral_norm(q);
        let asym = max_asymmetry(q);
        if asym > 1e-10 * scale {
            return Err(Error::NotSymmetric {
                index: i,
                max_asym: asym,
            });
        }
        let eigs = symmetric_eigenvalues(q);
        let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_eig = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if min_eig < -1e-10 * scale {
            return Err(Error::NotPsd { index: i, min_eig });
        }
        if !(max_eig > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "block {i} has lambda_max = {max_eig}; a nonzero block is required"
            )));
        }
        lipschitz.push(max_eig);
        cocoercivity.push(1.0 / max_eig);
    }
    let x_star_v = DVector::from_column_slice(&x_star);
    BlockOperator::new(
        partition,
        OperatorKind::SeparableQuadratic {
            blocks,
            x_star: x_star_v,
        },
        OperatorCertificates {
            lipschitz: Some(lipschitz),
            cocoercivity: Some(cocoercivity),
            weak_minty: Some(0.0),
            solution: Some(x_star),
        },
    )
}

/// Smallest `rho >= 0` with `M + M^T + 2 rho M^T M` PSD, found by bisecting
/// on the minimum eigenvalue; this is the exact weak-Minty certificate for
/// `G(x) = M (x - x*)`.
fn weak_minty_rho(m: &DMatrix<f64>) -> Result<f64> {
    let sym = m + m.transpose();
    let gram = m.transpose() * m;
    let scale = 1.0 + spectral_norm(&sym).max(spectral_norm(&gram));
    let tol = 1e-10 * scale;
    // A finite rho exists iff the symmetric part vanishes on ker(M): the
    // Gram term cannot repair indefiniteness coupled into that kernel.
    let gram_eigen = gram.clone().symmetric_eigen();
    for (idx, &eig) in gram_eigen.eigenvalues.iter().enumerate() {
        if eig.abs() <= tol {
            let v = gram_eigen.eigenvectors.column(idx);
            if (&sym * v).norm() > tol {
                return Err(Error::CertificateUnavailable(
                    "the symmetric part couples into a null direction of M^T M".into(),
                ));
            }
        }
    }
    let min_eig_at = |rho: f64| -> f64 {
        let h = &sym + 2.0 * rho * &gram;
        symmetric_eigenvalues(&h)
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    };
    if min_eig_at(0.0) >= -tol {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while min_eig_at(hi) < -tol {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::CertificateUnavailable(
                "minimum eigenvalue stays negative up to rho = 1e12".into(),
            ));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        if min_eig_at(mid) >= -tol {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Builds `G(x) = M (x - x*)` with exact machine-checked certificates:
/// per-block `L_i` from the spectral norm of block-row `i` of `M`, and the
/// smallest weak-Minty `rho` found by eigenvalue bisection.
pub fn make_linear_weak_minty(
    partition: BlockPartition,
    m: DMatrix<f64>,
    x_star: Vec<f64>,
) -> Result<BlockOperator> {
    let p = partition.dim();
    if m.nrows() != p || m.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: m.nrows(),
        });
    }
    if x_star.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: x_star.len(),
        });
    }
    let rho = weak_minty_rho(&m)?;
    let mut lipschitz = Vec::with_capacity(partition.num_blocks());
    for i in 0..partition.num_blocks() {
        let block_row = m.rows(partition.offset(i), partition.size(i)).clone_owned();
        lipschitz.push(spectral_norm(&block_row));
    }
    let x_star_v = DVector::from_column_slice(&x_star);
    let b = &m * &x_star_v;
    BlockOperator::new(
        partition,
        OperatorKind::Linear { m, b },
        OperatorCertificates {
            lipschitz: Some(lipschitz),
            cocoercivity: None,
            weak_minty: Some(rho),
            solution: Some(x_star),
        },
    )
}

/// Outcome of sampling the blockwise co-coercivity inequality at trial
/// pairs. Non-separable operators cannot have their constants certified
/// exactly, so user-asserted values go through this sampling check.
#[derive(Debug, Clone)]
pub struct CocoercivityReport {
    pub pass: bool,
    /// The most negative value of
    /// `<[Gx]_i - [Gy]_i, x_i - y_i> - beta_i ||[Gx]_i - [Gy]_i||^2` seen.
    pub worst_margin: f64,
    pub worst_block: usize,
    pub pairs_checked: usize,
}

/// Samples the blockwise inequality
/// `<[Gx]_i - [Gy]_i, x_i - y_i> >= beta_i ||[Gx]_i - [Gy]_i||^2`
/// on the given pairs with slack `-1e-10`.
pub fn check_cocoercivity(
    op: &BlockOperator,
    beta: &[f64],
    pairs: &[(BlockVector, BlockVector)],
) -> Result<CocoercivityReport> {
    let n = op.partition().num_blocks();
    if beta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: beta.len(),
        });
    }
    let mut worst = f64::INFINITY;
    let mut worst_block = 0;
    for (x, y) in pairs {
        let gx = op.eval_full(x);
        let gy = op.eval_full(y);
        for i in 0..n {
            let mut inner = 0.0;
            let mut diff_sq = 0.0;
            for (((a, b), xv), yv) in gx
                .block(i)
                .iter()
                .zip(gy.block(i))
                .zip(x.block(i))
                .zip(y.block(i))
            {
                let gd = a - b;
                inner += gd * (xv - yv);
                diff_sq += gd * gd;
            }
            let margin = inner - beta[i] * diff_sq;
            if margin < worst {
                worst = margin;
                worst_block = i;
            }
        }
    }
    Ok(CocoercivityReport {
        pass: worst >= -1e-10,
        worst_margin: worst,
        worst_block,
        pairs_checked: pairs.len(),
    })
}

/// Outcome of sampling the weak-Minty inequality at trial points.
#[derive(Debug, Clone)]
pub struct WeakMintyReport {
    pub pass: bool,
    /// The most negative value of `<Gx, x - x*> + rho ||Gx||^2` seen.
    pub worst_margin: f64,
    pub worst_point: usize,
    pub points_checked: usize,
}

/// Asserts `<Gx, x - x*> + rho ||Gx||^2 >= -1e-10` at each trial point.
pub fn check_weak_minty(
    op: &BlockOperator,
    rho: f64,
    points: &[BlockVector],
) -> Result<WeakMintyReport> {
    let x_star = op.solution()?;
    let mut worst = f64::INFINITY;
    let mut worst_point = 0;
    for (idx, x) in points.iter().enumerate() {
        let g = op.eval_full(x);
        let mut inner = 0.0;
        let mut g_sq = 0.0;
        for ((gv, xv), sv) in g.as_slice().iter().zip(x.as_slice()).zip(x_star.as_slice()) {
            inner += gv * (xv - sv);
            g_sq += gv * gv;
        }
        let margin = inner + rho * g_sq;
        if margin < worst {
            worst = margin;
            worst_point = idx;
        }
    }
    Ok(WeakMintyReport {
        pass: worst >= -1e-10,
        worst_margin: worst,
        worst_point,
        points_checked: points.len(),
    })
}

/// Solves `y + lambda (M y + b) = v` by a partial-pivot dense solve and
/// verifies the residual against `1e-10 * (1 + ||v||)`.
pub fn resolvent_affine(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    lambda: f64,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let p = v.len();
    if lambda == 0.0 {
        return Ok(v.clone());
    }
    let system = DMatrix::identity(p, p) + lambda * m;
    let rhs = v - lambda * b;
    let y = system
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularSystem)?;
    let residual = (&y + lambda * (m * &y + b) - v).norm();
    if residual > 1e-10 * (1.0 + v.norm()) {
        return Err(Error::SingularSystem);
    }
    Ok(y)
}

/// Closed-form proximal resolvents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProxKind {
    /// Shrinkage by `scale * mu` componentwise.
    SoftThreshold { mu: f64 },
    /// Componentwise clamp onto `[lo, hi]`; independent of the scale.
    BoxProjection { lo: f64, hi: f64 },
    /// The identity resolvent.
    Zero,
}

/// Applies the closed-form proximal map componentwise.
pub fn resolvent_prox(kind: &ProxKind, lambda: f64, v: &[f64]) -> Result<Vec<f64>> {
    match kind {
        ProxKind::SoftThreshold { mu } => {
            let t = lambda * mu;
            Ok(v.iter()
                .map(|&x| x.signum() * (x.abs() - t).max(0.0))
                .collect())
        }
        ProxKind::BoxProjection { lo, hi } => {
            if lo > hi {
                return Err(Error::InvalidParameter(format!(
                    "box bounds lo={lo} > hi={hi}"
                )));
            }
            Ok(v.iter().map(|&x| x.clamp(*lo, *hi)).collect())
        }
        ProxKind::Zero => Ok(v.to_vec()),
    }
}

/// A resolvent `v -> J_{lambda A}(v)` with a descriptor of the underlying
/// operator.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolvent {
    /// Resolvent of the affine-monotone map `A(y) = M y + b`.
    AffineMonotone {
        m: DMatrix<f64>,
        b: DVector<f64>,
    },
    Prox(ProxKind),
}

impl Resolvent {
    pub fn apply(&self, v: &[f64], lambda: f64) -> Result<Vec<f64>> {
        match self {
            Resolvent::AffineMonotone { m, b } => {
                let y = resolvent_affine(m, b, lambda, &DVector::from_column_slice(v))?;
                Ok(y.as_slice().to_vec())
            }
            Resolvent::Prox(kind) => resolvent_prox(kind, lambda, v),
        }
    }

    /// Precomputes the factorization for a fixed scale, for use in loops.
    pub fn factorize(&self, lambda: f64) -> Result<FactorizedResolvent> {
        match self {
            Resolvent::AffineMonotone { m, b } => {
                let p = b.len();
                let system = DMatrix::identity(p, p) + lambda * m;
                let lu = system.lu();
                // Reject singular systems up front with a probe solve.
                if lu.solve(&DVector::zeros(p)).is_none() {
                    return Err(Error::SingularSystem);
                }
                Ok(FactorizedResolvent::Affine {
                    lu,
                    shift: lambda * b,
                })
            }
            Resolvent::Prox(kind) => Ok(FactorizedResolvent::Prox {
                kind: kind.clone(),
                lambda,
            }),
        }
    }
}

/// A resolvent bound to one scale, with dense factors reused across calls.
#[derive(Debug, Clone)]
pub enum FactorizedResolvent {
    Affine {
        lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
        shift: DVector<f64>,
    },
    Prox {
        kind: ProxKind,
        lambda: f64,
    },
}

impl FactorizedResolvent {
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            FactorizedResolvent::Affine { lu, shift } => {
                let rhs = DVector::from_column_slice(v) - shift;
                let y = lu.solve(&rhs).ok_or(Error::SingularSystem)?;
                Ok(y.as_slice().to_vec())
            }
            FactorizedResolvent::Prox { kind, lambda } => resolvent_prox(kind, *lambda, v),
        }
    }
}

// ---------------------------------------------------------------------------
// Serialization mirrors (matrices stored row-major).
// ---------------------------------------------------------------------------

/// Dense matrix in row-major order, the on-disk format for all instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixData {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                got: self.data.len(),
            });
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
enum OperatorKindData {
    SeparableQuadratic {
        blocks: Vec<MatrixData>,
        x_star: Vec<f64>,
    },
    Linear {
        m: MatrixData,
        b: Vec<f64>,
    },
    Zero,
}

/// On-disk form of a [`BlockOperator`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockOperatorData {
    partition: Vec<usize>,
    operator: OperatorKindData,
    certificates: OperatorCertificates,
}

impl BlockOperator {
    pub fn to_data(&self) -> BlockOperatorData {
        let operator = match &self.kind {
            OperatorKind::SeparableQuadratic { blocks, x_star } => {
                OperatorKindData::SeparableQuadratic {
                    blocks: blocks.iter().map(MatrixData::from_matrix).collect(),
                    x_star: x_star.as_slice().to_vec(),
                }
            }
            OperatorKind::Linear { m, b } => OperatorKindData::Linear {
                m: MatrixData::from_matrix(m),
                b: b.as_slice().to_vec(),
            },
            OperatorKind::Zero => OperatorKindData::Zero,
        };
        BlockOperatorData {
            partition: self.partition.sizes().to_vec(),
            operator,
            certificates: self.certificates.clone(),
        }
    }

    pub fn from_data(data: &BlockOperatorData) -> Result<Self> {
        let partition = BlockPartition::new(data.partition.clone())?;
        let kind = match &data.operator {
            OperatorKindData::SeparableQuadratic { blocks, x_star } => {
                OperatorKind::SeparableQuadratic {
                    blocks: blocks
                        .iter()
                        .map(|m| m.to_matrix())
                        .collect::<Result<_>>()?,
                    x_star: DVector::from_column_slice(x_star),
                }
            }
            OperatorKindData::Linear { m, b } => OperatorKind::Linear {
                m: m.to_matrix()?,
                b: DVector::from_column_slice(b),
            },
            OperatorKindData::Zero => OperatorKind::Zero,
        };
        BlockOperator::new(partition, kind, data.certificates.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_data())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let data: BlockOperatorData = serde_json::from_str(text)?;
        Self::from_data(&data)
    }
}
