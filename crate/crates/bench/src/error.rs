use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: schema mismatch in column `{column}`: {detail}")]
    Schema { path: PathBuf, column: String, detail: String },

    #[error("bad input pattern: {0}")]
    Pattern(String),
}

impl BenchError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        BenchError::Io { path: path.to_path_buf(), source }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        BenchError::Csv { path: path.to_path_buf(), source }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
