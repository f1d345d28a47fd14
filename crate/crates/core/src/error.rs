use std::path::PathBuf;

/// Errors produced by the identification toolchain.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("activation cache is missing or was produced by different parameters")]
    StaleCache,

    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("integrator diverged at sample {index}")]
    Diverged { index: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("corrupt bundle: {0}")]
    Corrupt(String),

    #[error("bundle checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported bundle format version {0}")]
    Version(u32),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// Wraps the error with the file it concerns.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
