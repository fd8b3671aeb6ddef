use thiserror::Error;

/// Errors raised by the analytic engine, the simulator and the optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error in {what}: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("numeric accuracy failure in {what}: estimated error {error:e} exceeds tolerance {tolerance:e}")]
    Accuracy {
        what: &'static str,
        error: f64,
        tolerance: f64,
    },

    #[error("invalid configuration: field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("simulation window too small: {0}")]
    InsufficientWindow(String),

    #[error("channel matrix is rank deficient")]
    RankDeficient,

    #[error("empty tier `{0}` within the simulation window")]
    EmptyTier(&'static str),

    #[error("inconclusive: {0}")]
    Inconclusive(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
