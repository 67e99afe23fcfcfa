//! Error type shared by every module of the crate.

use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: String,
        value: String,
        reason: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("policy failed validation:\n{0}")]
    InvalidPolicy(ValidationReport),

    #[error("stationary distribution is inaccurate (residual {residual:e})")]
    Convergence { residual: f64 },

    #[error("observed sequence has zero probability under the policy at step {step}")]
    ZeroProbability { step: usize },

    #[error("enumeration of {required} sequences exceeds the budget of {budget}")]
    EnumerationBudget { required: u128, budget: u128 },

    #[error("{check}: trellis and exact enumeration differ by {delta:e}")]
    OracleMismatch { check: String, delta: f64 },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("evaluation of policy [{params}] failed: {source}")]
    Evaluation {
        params: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, value: impl ToString, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            value: value.to_string(),
            reason: reason.into(),
        }
    }

    /// Process exit status: 2 for bad configuration, 3 for numerical failure, 4 for I/O.
    pub fn exit_code(&self) -> u8 {
        match self.root() {
            Error::InvalidParameter { .. }
            | Error::Domain(_)
            | Error::InvalidPolicy(_)
            | Error::Config(_)
            | Error::EnumerationBudget { .. }
            | Error::Json(_) => 2,
            Error::Convergence { .. }
            | Error::ZeroProbability { .. }
            | Error::OracleMismatch { .. }
            | Error::Internal(_) => 3,
            Error::Io(_) => 4,
            Error::Evaluation { .. } => unreachable!("root strips wrappers"),
        }
    }

    /// Strips [`Error::Evaluation`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Evaluation { source, .. } => source.root(),
            other => other,
        }
    }
}
