use thiserror::Error;

use crate::solver::Trace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("power iteration did not converge in {iterations} iterations (last estimate {estimate})")]
    NoConvergence { iterations: usize, estimate: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("degenerate manifold signature: {0}")]
    DegenerateSignature(String),

    #[error("restricted injectivity violated: {0}")]
    RestrictedInjectivity(String),

    #[error("bound undefined: {0}")]
    UndefinedBound(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Non-finite iterate; carries everything recorded up to that point.
    #[error("iteration diverged at k = {iteration}")]
    Diverged { iteration: usize, trace: Box<Trace> },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
