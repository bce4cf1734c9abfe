use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed arguments: wrong dimensions, out-of-range indices, bad bounds.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    /// A persistency-of-excitation (or similar) precondition does not hold,
    /// so the requested guarantee does not apply.
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

/// Outcome of a check that is only meaningful when a hypothesis holds.
///
/// When the hypothesis fails the theory makes no claim, so the result is
/// neither "true" nor "false".
#[derive(Debug, Clone, PartialEq)]
pub enum Gated<T> {
    Evaluated(T),
    HypothesisViolated { reason: String },
}

impl<T> Gated<T> {
    pub fn evaluated(self) -> Option<T> {
        match self {
            Gated::Evaluated(v) => Some(v),
            Gated::HypothesisViolated { .. } => None,
        }
    }

    pub fn is_violated(&self) -> bool {
        matches!(self, Gated::HypothesisViolated { .. })
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Gated<U> {
        match self {
            Gated::Evaluated(v) => Gated::Evaluated(f(v)),
            Gated::HypothesisViolated { reason } => Gated::HypothesisViolated { reason },
        }
    }
}
