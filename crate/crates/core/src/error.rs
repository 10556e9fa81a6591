use thiserror::Error;

use crate::solver::PicardReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in field at index {0}")]
    NonFinite(usize),

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error("time {t} outside stored range [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    /// Picard iteration left the contraction regime; the report is kept for diagnosis.
    #[error(
        "Picard iteration did not converge within {} iterations (last residual {:e})",
        .0.iterations,
        .0.residuals.last().copied().unwrap_or(f64::NAN)
    )]
    NotConverged(Box<PicardReport>),

    #[error("certificate undefined: {0}")]
    Certificate(String),

    #[error("insufficient grid coverage: {0}")]
    Coverage(String),

    #[error("malformed data file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
