use thiserror::Error;

/// Errors raised by the simulation and analysis kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// The caller violated a usage contract (sizes, empty inputs, ...).
    #[error("usage error: {0}")]
    Usage(String),
    /// Evaluation at or past a singularity of the underlying equation.
    #[error("singularity: {0}")]
    Singularity(String),
    /// A trajectory left the representable range.
    #[error("integration aborted at step {step} (t = {time}): {reason}")]
    Integration {
        step: usize,
        time: f64,
        reason: String,
    },
    /// Spectral coefficients overflowed; the time step is too large.
    #[error("step-size error: {0}")]
    StepSize(String),
    /// An iterative solver failed to meet its tolerance.
    #[error("solver error: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}
