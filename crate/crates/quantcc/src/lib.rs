//! Chance-constrained nonlinear optimization via empirical quantiles.
//!
//! A chance constraint `P[c1(x, xi) <= 0] >= 1 - alpha` is equivalent to the
//! quantile constraint `Q^{1-alpha}(x) <= 0` on the `(1 - alpha)` quantile of
//! `c1(x, xi)`. This crate estimates that quantile from scenario samples,
//! estimates its gradient by central finite differences over common random
//! numbers (or by a kernel-smoothing baseline), and drives the resulting
//! stochastic merit function through a trust-region inner solver wrapped in
//! an augmented Lagrangian outer loop.
//!
//! Everything is deterministic given a master seed: batches are ChaCha8
//! streams derived with a documented counter scheme, so any run — including
//! the full benchmark harness — is replayable bit for bit.
//!
//! The `examples/` directory demonstrates each capability in isolation:
//! quantile estimation accuracy, both gradient estimators, the inner
//! trust-region solver, the end-to-end solves of the three benchmark
//! families, and the step-size sweep. The `quantcc` binary exposes the same
//! machinery as `solve`, `bench`, `gapcheck`, and `sweep-beta` subcommands.

pub mod alm;
pub mod error;
pub mod harness;
pub mod merit;
pub mod problems;
pub mod quantile;
pub mod sampling;
pub mod trust_region;

pub use alm::{alm_solve, validate_solution, AlmConfig, AlmResult, AlmStatus, Schedule, ValidationReport};
pub use error::{Error, Result};
pub use merit::{
    feasibility_sigma, merit_gradient_estimate, merit_value, update_multipliers, update_penalty,
    ConstraintVector, MeritParams,
};
pub use problems::{
    make_joint_chance, make_nonconvex1d, make_nonconvex1d_with, make_portfolio, OracleBundle,
    ProblemSpec,
};
pub use quantile::{
    empirical_quantile, fd_quantile_gradient, quantile_of_constraint, smoothing_quantile_gradient,
    QuantileQuery,
};
pub use sampling::{derive_seed, draw_batch, draw_joint_chance_batch, DistributionSpec, SampleBatch};
pub use trust_region::{
    build_local_model, solve_tr_subproblem, tr_minimize, BetaMode, GradientEstimator, LocalModel,
    SampleSchedule, TrParams, TrResult,
};
