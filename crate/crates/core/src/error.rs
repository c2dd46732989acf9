use thiserror::Error;

/// Errors raised by the numerical kernels, simulators and filters.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("NotSPD: matrix is not positive definite (pivot {pivot:e})")]
    NotSpd { pivot: f64 },

    #[error("SingularSystem: {0}")]
    SingularSystem(String),

    #[error("NoConvergence: {iterations} iterations, residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("InvalidStep: {0}")]
    InvalidStep(String),

    #[error("ScheduleOffGrid: observation instant {0} is not on the simulation grid")]
    ScheduleOffGrid(f64),

    #[error("GridMismatch: {0}")]
    GridMismatch(String),

    #[error("Overflow: exponent {0} exceeds the representable range")]
    Overflow(f64),

    #[error("TooFewSamples: need at least 2, got {0}")]
    TooFewSamples(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("IndefiniteCovariance: minimum eigenvalue {min_eigenvalue:e} at t = {t}")]
    IndefiniteCovariance { t: f64, min_eigenvalue: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
