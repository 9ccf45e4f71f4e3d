use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] indoornav_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{file}:{line}: {msg}")]
    Schema {
        file: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("codec error: {0}")]
    Codec(String),
    #[error("transport is closed")]
    Closed,
    #[error("timed out after {0} ms")]
    Timeout(u64),
    #[error("reasoner error: {0}")]
    Reasoner(String),
    #[error("pipeline error: {0}")]
    Pipeline(String),
    #[error("{0}")]
    Mismatch(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(file: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Schema {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code: 2 for bad input or configuration, 3 for faults at
    /// run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Core(indoornav_core::Error::Config(_)) => 2,
            _ => 3,
        }
    }
}
