use thiserror::Error;

/// Errors produced by calibration, table evaluation and the simulator.
#[derive(Debug, Error)]
pub enum FedcalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("internal numerical error: {0}")]
    Internal(String),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FedcalError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(FedcalError::InvalidArgument(msg.into()))
}

pub(crate) fn check_probability(name: &str, p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        invalid(format!("{name} must lie in (0, 1), got {p}"))
    }
}
