//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by field construction, rendering, training and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or matrix shapes are inconsistent for an operation.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An argument violates a documented precondition.
    #[error("invalid argument in {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    /// An MLP layer received input of the wrong width.
    #[error("mlp layer {layer}: expected {expected} input features, got {got}")]
    LayerInputMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },

    /// A query point lies outside the scene bounds.
    #[error("point ({x}, {y}, {z}) lies outside the scene bounds")]
    OutOfBounds { x: f64, y: f64, z: f64 },

    /// A computation produced a non-finite value.
    #[error("non-finite value in {op}: {detail}")]
    NonFinite { op: &'static str, detail: String },

    /// Underlying filesystem failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but does not parse as the expected format.
    #[error("malformed {what} in {path}: {detail}")]
    Format {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },

    /// A dataset directory violates the documented layout.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Image decode/encode failure.
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// Shorthand for [`Error::ShapeMismatch`].
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    /// Shorthand for [`Error::InvalidArgument`].
    pub fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    /// Shorthand for [`Error::Io`].
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Shorthand for [`Error::Format`].
    pub fn format(what: &'static str, path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            path: path.into(),
            detail: detail.into(),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
