use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PasError {
    #[error("missing required file {path}")]
    MissingFile { path: PathBuf },

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{file}:{line}: edge ({u}, {v}) crosses graph boundary")]
    CrossGraphEdge {
        file: PathBuf,
        line: usize,
        u: usize,
        v: usize,
    },

    #[error("{file}:{line}: graph indicator gap (id {id} after {prev})")]
    IndicatorGap {
        file: PathBuf,
        line: usize,
        id: usize,
        prev: usize,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },

    #[error(transparent)]
    Diff(#[from] diffcore::DiffError),
}

pub type Result<T> = std::result::Result<T, PasError>;
