use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
///
/// Variants are grouped into configuration, data and numerical failures so
/// the CLI can map them onto distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown FNF label code {code} at pixel (row {row}, col {col})")]
    UnknownLabel { code: u8, row: usize, col: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("missing source `{0}`")]
    MissingSource(String),

    #[error("band `{0}` not found")]
    MissingBand(String),

    #[error("band `{0}` is constant over the training pixels; percentiles are degenerate")]
    DegenerateBand(String),

    #[error("no cloud-free coverage for tile: all {0} acquisitions exceed the cloud threshold")]
    NoCloudFreeCoverage(usize),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("no positive (forest) pixels in target")]
    NoPositives,

    #[error("duplicate report key: {0}")]
    DuplicateKey(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure category, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Config,
            Error::NonFiniteLoss { .. } | Error::Numerical(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
