use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("missing value at row {row} for ticker {ticker}")]
    Gap { row: usize, ticker: String },

    #[error("duplicate date {0}")]
    DuplicateDate(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("lagged regressor matrix is rank-deficient ({0})")]
    SingularDesign(String),

    #[error("series {0} is constant")]
    DegenerateSeries(String),

    #[error("estimation failed for {context}: {message}")]
    Fit { context: String, message: String },

    #[error("assets {first} and {second} have zero distance")]
    ZeroDistance { first: String, second: String },

    #[error("objective is not finite at the starting point")]
    NonFiniteObjective,

    #[error("matrix is not symmetric (max deviation {0:e})")]
    Asymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is singular (condition estimate {condition:e})")]
    SingularMatrix { condition: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{model} did not converge after {iterations} iterations")]
    Convergence { model: String, iterations: usize },

    #[error("instrument matrix is rank-deficient: {0}")]
    InstrumentRank(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("filter diverged at period {0}")]
    State(usize),

    #[error("loss differential has zero variance")]
    ZeroVariance,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn fit(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Fit {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
