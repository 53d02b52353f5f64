//! Small dense linear algebra, safeguarded root finding and the special
//! functions the solvers need. Everything here is pure and reentrant.

mod linalg;
mod roots;
mod special;

pub use linalg::*;
pub use roots::{root_find_monotone, ROOT_MAX_ITERS};
pub use special::{
    beta_pdf, ln_beta, ln_gamma, reg_inc_beta, reg_inc_beta_inv, unit_ball_volume,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { pivot: f64, index: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("linear system is singular")]
    Singular,
    #[error("root is not bracketed: f(lo) = {f_lo:e}, f(hi) = {f_hi:e}")]
    NoBracket { f_lo: f64, f_hi: f64 },
    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("domain error: {0}")]
    Domain(String),
}
