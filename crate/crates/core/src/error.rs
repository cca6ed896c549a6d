use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input outside its domain: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed data: {0}")]
    Data(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("non-finite numbers: {0}")]
    Numeric(String),
    #[error("degenerate scene: {0}")]
    DegenerateScene(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Tensor(#[from] evslab_autograd::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
