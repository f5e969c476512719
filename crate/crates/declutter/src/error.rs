use thiserror::Error;

/// Errors arising from corpus data and file handling.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    DuplicateId(String),
    #[error("{0}")]
    Invalid(String),
    #[error("missing alignment for record {0}")]
    MissingAlignment(String),
}

/// Errors from numerical routines.
#[derive(Debug, Error)]
pub enum NumericError {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("matrix not symmetric (max asymmetry {0})")]
    Asymmetric(f64),
    #[error("eigensolver failed to converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("{0}")]
    Invalid(String),
    #[error("NaN loss at step {0}")]
    NanLoss(usize),
}
