use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A malformed input row; `line` is 1-based and counts the header.
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    /// AUC and related statistics need both classes present.
    #[error("single-class input: both positive and negative labels are required")]
    SingleClass,

    #[error("bootstrap redraw limit exceeded after {attempts} attempts")]
    RedrawLimit { attempts: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that come from the numerics rather than from the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Shape(_) | Error::RedrawLimit { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
