use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("spin value {value} out of range at vertex {vertex}")]
    SpinOutOfRange { vertex: usize, value: i64 },
    #[error("configuration has {got} values, ball needs {expected}")]
    ConfigSize { expected: usize, got: usize },
    #[error("configurations disagree on the boundary shell at vertex {0}")]
    ShellMismatch(usize),
    #[error("enumeration budget exceeded: {what} needs more than {budget} items")]
    BudgetExceeded { what: String, budget: u64 },
    #[error("series diverges: {0}")]
    Divergent(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
