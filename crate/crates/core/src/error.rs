use thiserror::Error;

use crate::evolution::SolveReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("Newton solver did not converge at t = {time}: residual {residual:e} after {iterations} iterations", residual = report.final_residual_norm, iterations = report.newton_iterations)]
    NewtonFailure { time: f64, report: SolveReport },

    #[error("projected Gauss-Seidel did not converge after {sweeps} sweeps (last update {last_update:e})")]
    ProjectionFailure { sweeps: usize, last_update: f64 },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(line: usize, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: message.into(),
        }
    }
}
