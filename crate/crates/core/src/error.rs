//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed header: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },

    #[error("{path}: color PFM (\"PF\") is not supported, expected grayscale \"Pf\"")]
    ColorPfm { path: PathBuf },

    #[error("{path}: file truncated: expected {expected} bytes of payload, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: non-finite value at row {row}, col {col}")]
    NonFiniteValue {
        path: PathBuf,
        row: usize,
        col: usize,
    },

    #[error("{path}: mask byte {value} at row {row}, col {col} (must be 0 or 255)")]
    NonBinaryMask {
        path: PathBuf,
        value: u8,
        row: usize,
        col: usize,
    },

    #[error("{path}: {detail}")]
    MalformedCamera { path: PathBuf, detail: String },

    #[error("degenerate intrinsics: {detail}")]
    DegenerateIntrinsics { detail: String },

    #[error("not a rotation: {detail}")]
    NotARotation { detail: String },

    #[error("invalid grid: {detail}")]
    InvalidGrid { detail: String },

    #[error("shape mismatch in {context}: {expected:?} vs {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid parameter: {detail}")]
    InvalidParameter { detail: String },

    #[error("empty valid set: no pixels left to evaluate")]
    EmptyValidSet,

    #[error("trajectory length mismatch: ground truth has {gt} poses, prediction has {pred}")]
    TrajectoryLengthMismatch { gt: usize, pred: usize },

    #[error(
        "degenerate prediction: predicted translations are all zero, scale alignment is undefined"
    )]
    DegenerateScale,
}

impl Error {
    /// An I/O failure tagged with the offending path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn header(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::MalformedHeader {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn grid(detail: impl Into<String>) -> Self {
        Error::InvalidGrid {
            detail: detail.into(),
        }
    }

    /// An invalid parameter value with a human-readable explanation.
    pub fn param(detail: impl Into<String>) -> Self {
        Error::InvalidParameter {
            detail: detail.into(),
        }
    }
}
