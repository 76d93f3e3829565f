use std::io;

use thiserror::Error;

/// Errors raised by the laboratory.
///
/// The variants split into configuration problems (caller can fix the
/// input) and numerical failures (the run itself went wrong); the CLI maps
/// them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("kernel singularity: {0}")]
    Singularity(String),
    #[error("time step {dt} violates the CFL bound {bound}")]
    StepSize { dt: f64, bound: f64 },
    #[error("numerical failure at t = {t}: {message}")]
    Numerical { t: f64, message: String },
    #[error("time {t} outside trajectory span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    /// True for errors caused by the input rather than by the computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Validation(_) | Error::GridMismatch(_) | Error::Format(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
