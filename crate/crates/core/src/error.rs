// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("arity mismatch: expected {expected}, got {actual}")]
    ArityMismatch { expected: usize, actual: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("function is not linear in argument {0}")]
    NotLinear(String),
    #[error("transpose undefined: {0}")]
    UndefinedTranspose(String),
    #[error("no rule for primitive {0}")]
    MissingRule(String),
    #[error("functional has no terminal integrate")]
    IntegrationRequired,
    #[error("invalid permutation {0:?}")]
    InvalidPermutation(Vec<usize>),
    #[error("invalid range [{a}, {b}] with n = {n}")]
    InvalidRange { a: f64, b: f64, n: usize },
    #[error("newton iteration did not converge for node {0}")]
    ConvergenceFailure(usize),
    #[error("unbound variable v{0}; substitute a concrete function before evaluation")]
    UnboundVariable(u64),
    #[error("parameter {0} has no value in this evaluation session")]
    UnboundParameter(usize),
    #[error("a grid is required: {0}")]
    GridRequired(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
