use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("class-range error: {0}")]
    ClassRange(String),
    #[error("optimizer-state error: {0}")]
    OptimizerState(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("neighborhood error: {0}")]
    Neighborhood(String),
    #[error("normalization error: {0}")]
    Normalization(String),
    #[error("precondition error: {0}")]
    Precondition(String),
    #[error("statistics error: {0}")]
    Statistics(String),
    #[error("compensation error: {0}")]
    Compensation(String),
    #[error("memory error: {0}")]
    Memory(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("parse error in {source_name} at line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("missing dataset: {}", .0.display())]
    MissingDataset(PathBuf),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code: 2 for user or configuration mistakes, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::MissingDataset(_)
            | Error::Parse { .. }
            | Error::Generation(_)
            | Error::Schedule(_)
            | Error::Memory(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
