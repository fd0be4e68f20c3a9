use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("point ({x:.4}, {y:.4}) lies outside the cell grid")]
    OutOfDomain { x: f64, y: f64 },

    #[error("no data: {0}")]
    EmptyData(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("segment of {frames} frames is shorter than the {required} frames the model needs")]
    SegmentTooShort { frames: usize, required: usize },

    #[error("unknown class id {0}")]
    UnknownClass(usize),

    #[error("signal has zero energy; PHAT weighting is undefined")]
    ZeroEnergy,

    #[error("incompatible sample rates: {0} Hz vs {1} Hz")]
    SampleRate(f64, f64),

    #[error("all candidates have zero prior probability")]
    ZeroPrior,

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingArtifact(path);
        }
        Error::Io { path, source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
