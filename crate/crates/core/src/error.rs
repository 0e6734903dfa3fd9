use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration at `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("token id {id} out of vocabulary (size {vocab})")]
    TokenOutOfVocab { id: usize, vocab: usize },
    #[error("label {label} out of range (classes {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: usize },
    #[error("zero direction: {0}")]
    ZeroDirection(String),
    #[error("collinear directions (|cos| = {0:.6})")]
    Collinear(f64),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
