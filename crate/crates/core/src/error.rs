use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate dependent variable: all values are equal")]
    DegenerateDepVar,

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("column `{name}` has {got} rows, expected {expected}")]
    LengthMismatch {
        name: String,
        got: usize,
        expected: usize,
    },

    #[error("no complete rows left after dropping {dropped} rows with missing values")]
    EmptyDataset { dropped: usize },

    #[error("dataset has {n} rows but {k} coefficients")]
    TooFewRows { n: usize, k: usize },

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no uncensored observations strictly between the limits")]
    NoUncensored,

    #[error("degenerate censoring: every observation is censored at the {0} limit")]
    DegenerateCensoring(&'static str),

    #[error("binary model requires a 0/1 dependent variable with both outcomes present")]
    NotBinary,

    #[error("quantile {0} was not fitted")]
    TauNotFitted(f64),

    #[error("covariate `{0}` is not in the fitted model")]
    UnknownCovariate(String),

    #[error("non-convergence: {0}")]
    NonConvergence(String),

    #[error("bootstrap unreliable: {failed} of {total} replicates failed")]
    BootstrapUnreliable { failed: usize, total: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidSpec(_) | Error::UnknownCovariate(_) | Error::TauNotFitted(_) => {
                ErrorClass::Usage
            }
            Error::NonConvergence(_) | Error::BootstrapUnreliable { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
