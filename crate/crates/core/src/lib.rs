//! Cross-semantic transfer learning for high-dimensional linear regression.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod cli;
pub mod error;
pub mod io;
pub mod lasso;
pub mod model;
pub mod oracle;
pub mod scad;
pub mod sim;
pub mod tuning;

pub use error::{Error, Result};
