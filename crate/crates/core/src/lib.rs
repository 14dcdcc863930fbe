//! Low-rank matrix and tensor completion with accelerated inexact
//! Soft-Impute.
//!
//! The solvers minimize `sum over observed (i, j) of loss(X_ij, O_ij) + lambda * R(X)`
//! where `R` is the nuclear norm (or a nonconvex spectral penalty handled by
//! difference-of-convex outer loops). Iterates stay in factored form and the
//! proximal step is computed on a power-method range of an implicit
//! sparse-plus-low-rank operator, so an iteration costs
//! `O(k * nnz + k^2 * (m + n))` rather than a dense SVD.
//!
//! Module map:
//!
//! - [`linalg`]: dense kernels, power method, exact/approximate/weighted SVT
//! - [`sparse`], [`splr`]: observed data and the sparse-plus-low-rank operator
//! - [`loss`]: square and logistic losses, sparse gradients, objectives
//! - [`solver`]: AIS-Impute, Soft-Impute, exact-SVT accelerated baseline
//! - [`nonconvex`]: truncated nuclear norm, capped-l1, log-sum penalty
//! - [`postprocess`]: singular value refitting by L-BFGS
//! - [`tensor`]: scaled-latent-nuclear-norm tensor completion
//! - [`cli`]: the `ais-impute` command line
//! - [`data`], [`metrics`], [`factor_io`], [`tuning`]: datasets, evaluation,
//!   persistence and validation-based selection of `lambda`

pub mod cli;
pub mod data;
pub mod error;
pub mod factor_io;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod nonconvex;
pub mod postprocess;
pub mod rng;
pub mod solver;
pub mod sparse;
pub mod splr;
pub mod tensor;
pub mod tuning;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, LowRankFactors};
pub use loss::LossKind;
pub use solver::{ais_impute, apg_exact, soft_impute, SolverConfig, SolverTrace};
pub use sparse::SparseCoo;
