//! Randomized block-coordinate optimistic-gradient solvers for root-finding
//! problems `Gx = 0`, the operator-splitting layer that turns finite-sum
//! inclusions into such problems, message-passing simulations of the derived
//! federated algorithms, and a diagnostics suite that verifies the descent
//! inequalities and convergence-rate envelopes the solvers are designed to
//! satisfy.

pub mod blockcore;
pub mod checks;
pub mod diagnostics;
pub mod error;
pub mod fedsim;
pub mod operators;
pub mod runner;
pub mod solvers;
pub mod splitting;
pub mod trace;

pub use blockcore::{
    block_scatter, sample_block, weighted_norm_sq, BlockDistribution, BlockPartition, BlockVector,
    IndexStream, WeightVector,
};
pub use error::{Error, Result};
pub use operators::{
    check_weak_minty, make_linear_weak_minty, make_separable_cocoercive, resolvent_affine,
    resolvent_prox, BlockOp, BlockOperator, OperatorCertificates, OperatorKind, ProxKind,
    Resolvent,
};
pub use solvers::{
    arcog_constants, arcog_schedule_at, arcog_step_direct, arcog_step_practical,
    derive_rcog_params, rcog_step, reconstruct_iterate, ArcogConstants, ArcogSchedule,
    PracticalState, RcogParams, SchedulePoint,
};
pub use splitting::{
    consensus_resolvent, drs_apply, fbfs_apply, fbfs_star_check, lambda_range,
    solution_certificate_a, solution_certificate_b, DrsOperator, FbfsOperator, ProductPoint,
    SplitProblem,
};
pub use trace::{RunTrace, TraceRow};
