//! Error types shared across the library.

use thiserror::Error;

/// Errors produced by construction, parameter derivation, and solver kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("block index {index} out of range for {n} blocks")]
    BlockIndexOutOfRange { index: usize, n: usize },

    #[error("invalid block partition: {0}")]
    InvalidPartition(String),

    #[error("invalid block distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid weight vector: {0}")]
    InvalidWeights(String),

    #[error("matrix block {index} is not symmetric (max asymmetry {max_asym:.3e})")]
    NotSymmetric { index: usize, max_asym: f64 },

    #[error("matrix block {index} is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotPsd { index: usize, min_eig: f64 },

    #[error("no finite weak-Minty certificate exists: {0}")]
    CertificateUnavailable(String),

    #[error("operator is missing a required certificate: {0}")]
    MissingCertificate(&'static str),

    #[error("operator has no known solution attached")]
    MissingSolution,

    #[error("infeasible stepsizes: |rho| = {rho:.6e} must be < rho_bar = {rho_bar:.6e}")]
    InfeasibleStepsize { rho: f64, rho_bar: f64 },

    #[error("infeasible relaxation weight: omega = {omega:.6e} must be in (0, {ceiling:.6e})")]
    InfeasibleOmega { omega: f64, ceiling: f64 },

    #[error("schedule parameter nu = {0} must exceed 3")]
    InvalidNu(f64),

    #[error("invalid schedule or constants input: {0}")]
    InvalidParameter(String),

    #[error("tau = {tau:.3e} underflowed the practical-kernel floor; renormalization needed")]
    RenormalizationNeeded { tau: f64 },

    #[error("linear system is singular beyond solver tolerance")]
    SingularSystem,

    #[error("lambda range infeasible: 8*L*rho = {value:.6e} exceeds 1")]
    InfeasibleLambda { value: f64 },

    #[error("lambda = {lambda:.6e} outside the feasible range [{lo:.6e}, {hi:.6e}]")]
    LambdaOutOfRange { lambda: f64, lo: f64, hi: f64 },

    #[error("exact enumeration requires n <= {cap}, got n = {n}")]
    EnumerationCapExceeded { n: usize, cap: usize },

    #[error("nonpositive value {value:.3e} at k = {k} inside a log-log fit window")]
    NonPositiveTraceValue { k: usize, value: f64 },

    #[error("empty or invalid fit window [{lo}, {hi}]")]
    InvalidWindow { lo: usize, hi: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
