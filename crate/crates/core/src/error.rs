use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input file. `location` names a byte offset or a row.
    #[error("parse error in {source_name} at {location}: {message}")]
    Parse {
        source_name: String,
        location: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("{} repeated feature vectors carry different labels (first at canonical index {})", .0.collisions.len(), .0.collisions.first().map(|c| c.first_index).unwrap_or(0))]
    RepeatedSamples(crate::dataset::UniquenessReport),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The exhaustive oracle refused because the enumeration would be too large.
    #[error("enumeration of {required} attack sets exceeds the cap of {cap}")]
    CapExceeded { required: u128, cap: u128 },

    #[error("stale artifact: {0}")]
    HashMismatch(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn parse(
        source_name: impl Into<String>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}

impl From<bincode::Error> for Error {
    fn from(e: bincode::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
