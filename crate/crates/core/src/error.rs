use thiserror::Error;

/// Errors raised by the analytic and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    /// The closed-form bound needs `d = D/(c_D T) - 1/snr > 0`.
    #[error("bound condition violated: d = {d} is not positive")]
    ConditionViolated { d: f64 },

    #[error("empty sample set")]
    EmptySamples,

    #[error("infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
