use std::path::Path;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    IoAt {
        path: String,
        source: std::io::Error,
    },

    #[error("pose file line {line}: {reason}")]
    PoseFormat { line: usize, reason: String },

    #[error("velodyne record stream of {0} bytes is not a multiple of 16")]
    VelodyneLength(usize),

    #[error("{0}")]
    Data(String),

    #[error("cannot build a nearest-neighbor index over an empty cloud")]
    EmptyIndex,

    #[error("no correspondences survived gating")]
    NoCorrespondences,

    #[error("degenerate geometry: {reason} (usable pairs {usable_pairs}, condition {condition:.3e})")]
    DegenerateGeometry {
        reason: String,
        usable_pairs: usize,
        condition: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl Error {
    pub fn io_at(path: &Path, source: std::io::Error) -> Self {
        Error::IoAt {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
