use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the model, estimation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("product line is empty")]
    EmptyLine,

    #[error("margins must be strictly descending (positions {0} and {1})")]
    MarginsNotStrictlyDescending(usize, usize),

    #[error("brute force enumeration limited to {limit} products, got {actual}")]
    TooManyProducts { limit: usize, actual: usize },

    #[error("assortment index {index} out of range for a line of {len} products")]
    AssortmentOutOfRange { index: usize, len: usize },

    #[error("root bracket could not be established: {0}")]
    NoBracket(String),

    #[error("share inversion failed at theta = {theta} in {} market(s): {}", markets.len(), markets.join(", "))]
    InversionFailed { theta: f64, markets: Vec<String> },

    #[error("objective could not be evaluated anywhere in the theta bracket [{lo}, {hi}]")]
    BracketInfeasible { lo: f64, hi: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("panel schema violation at row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch { what, expected, actual }
    }

    /// True for failures caused by the numerical procedure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::InversionFailed { .. } | Error::BracketInfeasible { .. } | Error::NoBracket(_)
        )
    }
}
