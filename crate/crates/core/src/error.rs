use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or grid shapes disagree. `axes` names the offending axes.
    #[error("dimension mismatch in {op}: {axes} (got {got:?}, expected {expected:?})")]
    Dimension {
        op: &'static str,
        axes: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("geodesy: {0}")]
    Geodesy(String),

    #[error("coverage: slice footprint exceeds mosaic by {missing}")]
    Coverage { missing: String },

    #[error("tile ({row}, {col}) is missing from the mosaic")]
    Tile { row: usize, col: usize },

    #[error("format: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("numeric: {0}")]
    Numeric(String),

    #[error("domain: {0}")]
    Domain(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn dim(
        op: &'static str,
        axes: impl Into<String>,
        got: &[usize],
        expected: &[usize],
    ) -> Self {
        Error::Dimension {
            op,
            axes: axes.into(),
            got: got.to_vec(),
            expected: expected.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Geodesy(_) => "geodesy",
            Error::Coverage { .. } => "coverage",
            Error::Tile { .. } => "tile",
            Error::Format(_) => "format",
            Error::Truncated { .. } => "truncated",
            Error::Label { .. } => "label",
            Error::Numeric(_) => "numeric",
            Error::Domain(_) => "domain",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json { .. } => "json",
        }
    }
}
