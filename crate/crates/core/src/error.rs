use std::io;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("range error: {0}")]
    Range(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("state error: {0}")]
    State(String),
    #[error("load error: {0}")]
    Load(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Range(_) => "range",
            Error::Config(_) => "config",
            Error::Dimension(_) => "dimension",
            Error::Argument(_) => "argument",
            Error::Numeric(_) => "numeric",
            Error::State(_) => "state",
            Error::Load(_) => "load",
            Error::Incompatible(_) => "incompatible",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    /// The message without the variant prefix.
    pub fn detail(&self) -> String {
        match self {
            Error::Range(m)
            | Error::Config(m)
            | Error::Dimension(m)
            | Error::Argument(m)
            | Error::Numeric(m)
            | Error::State(m)
            | Error::Load(m)
            | Error::Incompatible(m) => m.clone(),
            Error::Io(e) => e.to_string(),
            Error::Json(e) => e.to_string(),
            Error::Csv(e) => e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
