use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite angle: {0}")]
    InvalidAngle(String),

    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("sample has an empty pseudo-LiDAR cloud")]
    EmptySample,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing or malformed key `{key}`")]
    Parse { key: String },

    #[error("calibration rejected: {0}")]
    Calib(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("pillar images have no overlap to correlate")]
    NoOverlap,

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{stage}: {path}: {source}")]
    Io {
        stage: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable code, printed by the CLI on failure.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidAngle(_) => "INVALID_ANGLE",
            Error::InvalidRotation(_) => "INVALID_ROTATION",
            Error::Dimension(_) => "DIMENSION",
            Error::EmptyCloud => "EMPTY_CLOUD",
            Error::EmptySample => "EMPTY_SAMPLE",
            Error::EmptyDataset => "EMPTY_DATASET",
            Error::Config(_) => "CONFIG",
            Error::Parse { .. } => "PARSE",
            Error::Calib(_) => "CALIB",
            Error::Format(_) => "FORMAT",
            Error::NoOverlap => "NO_OVERLAP",
            Error::Input(_) => "INPUT",
            Error::Io { .. } => "IO",
        }
    }

    pub fn io(stage: &'static str, path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            stage,
            path: path.into(),
            source,
        }
    }
}
