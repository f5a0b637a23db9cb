//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input value (point, parameter, matrix entry) was NaN or infinite.
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    /// A matrix expected to be a rotation failed the orthogonality or
    /// determinant check.
    #[error("not a rotation matrix: {0}")]
    NotARotation(String),

    /// An operation that needs at least one point received an empty cloud.
    #[error("point cloud is empty")]
    EmptyCloud,

    /// All points coincide (zero spread), so scale normalization and
    /// registration are undefined.
    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    /// A geometric solve has no unique answer (e.g. collinear correspondences).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("too few correspondences: got {got}, need at least {need}")]
    TooFewPairs { got: usize, need: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// File exists but its contents do not parse as the stated format.
    #[error("{path}: malformed {format}: {detail}")]
    Malformed {
        path: PathBuf,
        format: &'static str,
        detail: String,
    },

    /// Valid file of a format (or format variant) this tool does not handle,
    /// e.g. big-endian binary PLY.
    #[error("{path}: unsupported: {detail}")]
    Unsupported { path: PathBuf, detail: String },

    /// A point-cloud file that declares or contains zero points.
    #[error("{path}: file contains no points")]
    NoPoints { path: PathBuf },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A checkpoint file whose magic/version/shape does not match.
    #[error("{path}: invalid checkpoint: {detail}")]
    BadCheckpoint { path: PathBuf, detail: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Training produced a NaN/inf loss or gradient and was aborted.
    #[error("numerical failure during optimization: {0}")]
    NumericalFailure(String),
}

impl Error {
    /// Process exit code for the CLI: 2 for input/config problems,
    /// 3 for numerical aborts, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::NumericalFailure(_) => 3,
            Error::NonFinite(_)
            | Error::NotARotation(_)
            | Error::EmptyCloud
            | Error::DegenerateCloud(_)
            | Error::DegenerateGeometry(_)
            | Error::TooFewPairs { .. }
            | Error::Io { .. }
            | Error::Malformed { .. }
            | Error::Unsupported { .. }
            | Error::NoPoints { .. }
            | Error::InvalidConfig(_)
            | Error::BadCheckpoint { .. }
            | Error::ShapeMismatch(_) => 2,
        }
    }
}
