use std::path::PathBuf;

/// Error type shared across the codec.
///
/// The variants map onto the distinct failure classes the command line tool
/// reports through its exit code: bad user input, inconsistent configuration,
/// malformed data produced by something else, and plain I/O trouble.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A shape, size or option is inconsistent with the model or with
    /// another option.
    #[error("configuration error: {0}")]
    Config(String),

    /// The input itself is unusable (wrong image size, bad pixel format).
    #[error("invalid input: {0}")]
    Input(String),

    /// A bitstream or payload failed validation while being read.
    #[error("corrupt data: {0}")]
    CorruptData(String),

    /// A model file failed validation while being read.
    #[error("corrupt model: {0}")]
    CorruptModel(String),

    /// Training produced a non-finite value; the message names the first
    /// tensor where it appeared.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn corrupt(msg: impl Into<String>) -> Self {
        Error::CorruptData(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
