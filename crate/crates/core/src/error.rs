use std::path::PathBuf;

/// Errors produced by every stage of the pipeline.
///
/// The variant name doubles as the machine-readable kind printed by the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("convergence error: {message} (final max pair distance {final_distance:.6e})")]
    Convergence { message: String, final_distance: f64 },
    #[error("training error: {0}")]
    Training(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    /// Short stable identifier, used as the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::Domain(_) => "domain",
            Error::Format(_) => "format",
            Error::Validation(_) => "validation",
            Error::Geometry(_) => "geometry",
            Error::Numeric(_) => "numeric",
            Error::Range(_) => "range",
            Error::Convergence { .. } => "convergence",
            Error::Training(_) => "training",
            Error::Internal(_) => "internal",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
