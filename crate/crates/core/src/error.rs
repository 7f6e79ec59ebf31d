use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error at line {line}: {msg}")]
    Validation { line: usize, msg: String },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("index {index} out of range for {what} of size {len}")]
    Bounds { what: &'static str, index: usize, len: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("requested {requested} components but the data only has rank {achievable}")]
    Rank { requested: usize, achievable: usize },

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
