use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unparseable document: {0}")]
    Unparseable(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("index {index} out of range for size {size}")]
    Range { index: usize, size: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered in {0}")]
    NanPropagation(&'static str),

    #[error("sequence of length {len} exceeds context length {context_len}")]
    ContextOverflow { len: usize, context_len: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: u64, reason: String },

    #[error("model/vocabulary mismatch: {0}")]
    Compatibility(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
