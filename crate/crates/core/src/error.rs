use thiserror::Error;

/// Errors raised by the augmentation laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("rows violate the sum-to-one constraint: {rows:?}")]
    RowSums { rows: Vec<usize> },

    #[error("enumeration too large: {what} needs {needed} entries, budget is {budget}")]
    Budget {
        what: String,
        needed: u128,
        budget: u128,
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },

    #[error("encoder is rank deficient: smallest singular value of the weighted Gram is {singular_value:e}")]
    RankDeficient { singular_value: f64 },

    #[error("covariance G is numerically singular (condition number {condition:e})")]
    Singular { condition: f64 },

    #[error("requested dimension {requested} exceeds available rank {rank}")]
    RankExceeded { requested: usize, rank: usize },

    #[error("no closed form is known for scheme {0}")]
    UnsupportedScheme(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("optimization diverged at iteration {iteration} (loss {loss})")]
    Divergence { iteration: usize, loss: f64 },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
