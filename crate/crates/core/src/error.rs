use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants follow the failure classes of the library contracts: structural
/// mismatches, out-of-range geometry, bad parameters, enumeration capacity,
/// missing arguments and violated preconditions.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("capacity error: {branches} enumeration branches exceed the cutoff of {cutoff}")]
    Capacity { branches: u128, cutoff: u128 },

    #[error("argument error: {0}")]
    Argument(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
