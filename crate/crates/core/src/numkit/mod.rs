//! Dense vector helpers, a tape-based differentiation kernel, and an
//! optimal-assignment solver.
//!
//! All reductions run in `f64` and sum strictly in increasing index order,
//! so results are bit-reproducible for fixed inputs.

mod assign;
pub mod autodiff;
mod vector;

pub use assign::{solve_assignment, solve_partial_assignment, CostMatrix};
pub use autodiff::{gradient, hessian_vector_product, value, value_and_gradient, Dual, Objective, Scalar, Tape, Var};
pub use vector::{axpy, cosine_similarity, dot, norm, Vector};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("vector must have at least one element")]
    Empty,
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate input: zero-norm vector in {op}")]
    ZeroNorm { op: &'static str },
    #[error("cost matrix has {rows}x{cols} shape but {len} entries")]
    Shape { rows: usize, cols: usize, len: usize },
}
