use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of bounds: {0}")]
    OutOfBounds(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph still contains batch normalization layer `{0}`; fold batch norm first")]
    UnfoldedBatchNorm(String),

    #[error("layer `{layer}` has no batch-norm statistics: {hint}")]
    MissingStatistics { layer: String, hint: String },

    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("blob file {0} not found")]
    MissingBlob(PathBuf),

    #[error("blob reference `{name}` out of bounds: offset {offset} + len {len} exceeds blob size {size}")]
    BlobBounds {
        name: String,
        offset: u64,
        len: u64,
        size: u64,
    },

    #[error("checksum mismatch for `{name}`: manifest {expected:#010x}, blob {actual:#010x}")]
    Checksum {
        name: String,
        expected: u32,
        actual: u32,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
