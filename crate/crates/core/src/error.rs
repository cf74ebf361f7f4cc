use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A position, length or id fell outside its allowed range.
    #[error("out of range: {0}")]
    Range(String),

    /// A file has the wrong magic bytes or an unsupported version.
    #[error("format error: {0}")]
    Format(String),

    /// A file is truncated or internally inconsistent.
    #[error("corrupt data: {0}")]
    Corruption(String),

    /// A cached block was produced by a different model.
    #[error("stale cache entry: {0}")]
    Stale(String),

    /// Two different payloads share a content hash.
    #[error("content hash collision for {0}")]
    HashCollision(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn range(msg: impl Into<String>) -> Error {
    Error::Range(msg.into())
}
