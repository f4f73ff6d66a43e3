use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A point that must be in front of a camera is not.
    #[error("point is behind camera (depth {depth})")]
    BehindCamera { depth: f64 },

    /// Inputs that disagree with each other (sizes, counts, geometries).
    #[error("usage error: {0}")]
    Usage(String),

    /// A structurally valid file carrying invalid data.
    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("no flame pixels in any mask")]
    NoFlame,

    #[error("visual hull is empty; nothing to reconstruct")]
    EmptyHull,

    #[error("color-temperature map unusable: {0}")]
    ColorMap(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The smear synchronization protocol was not followed.
    #[error("protocol violation: {0}")]
    Protocol(String),

    /// A camera recorded no smear dot: the strobe fired while it was
    /// acquiring.
    #[error("camera {camera} shows no smear dot; the flash fell in its acquisition phase")]
    FlashInAcquisition { camera: usize },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or inconsistent input data, as
    /// opposed to bad invocation.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Usage(_))
    }
}
