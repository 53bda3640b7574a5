//! ADMM for the all-pairs fusion objective
//!
//! ```text
//! (1/n_t)||Y_t - X_t b||^2 + (1/n_s)||Y_s - X_s t||^2
//!     + lambda0 sum_j w_j |b_j| + lambda1 sum_{j,l} w_{jl} |b_j - t_l|
//! ```
//!
//! split as `z = A eta`, `delta = D eta` with `eta = (b, t)`. The
//! `eta`-update is a linear solve against a cached Cholesky factor, the `z`
//! and `delta` updates are soft-thresholds, and `D` is applied matrix-free.

mod operators;
mod solver;
mod system;

pub use operators::{d_apply, d_apply_into, dt_apply, dt_apply_add, soft_threshold, structural_dtd};
pub use solver::{admm_solve, objective_value, AdmmOptions, AdmmState, Residuals, SolveResult};
pub use system::{build_factored_system, FactoredSystem, PooledSystem};
