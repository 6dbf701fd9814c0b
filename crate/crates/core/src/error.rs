use thiserror::Error;

use crate::cone_solver::SolverStatus;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("cone solver stopped with {status:?} at AO iteration {iteration}")]
    Solver { iteration: usize, status: SolverStatus },

    #[error("{failed} of {total} channels failed, above the 5% abort threshold")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
