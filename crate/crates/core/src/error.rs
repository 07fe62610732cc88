use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("record {record}: unknown level {label:?} for variable {variable}")]
    UnknownLevel {
        record: usize,
        variable: String,
        label: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("model specification: {0}")]
    Spec(String),

    /// The input is valid but the requested quantity is undefined on it,
    /// e.g. a criterion over sample uniques when there are none.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("chain aborted at iteration {iteration} in {component}: {detail}")]
    NonFinite {
        iteration: usize,
        component: &'static str,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
