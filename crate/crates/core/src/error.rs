use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate geometry: element {element} has length {length:e} m")]
    Degenerate { element: usize, length: f64 },

    #[error("simulation unstable at step {step}: {reason}")]
    Instability { step: u64, reason: String },

    #[error("replay buffer holds {size} transitions, {requested} requested")]
    NotReady { size: usize, requested: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },

    #[error("waveform row {row} violates contract: {reason}")]
    Waveform { row: usize, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable tag, used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Degenerate { .. } => "degenerate",
            Error::Instability { .. } => "instability",
            Error::NotReady { .. } => "not_ready",
            Error::Divergence(_) => "divergence",
            Error::Shape(_) => "shape",
            Error::Parse { .. } => "parse",
            Error::Waveform { .. } => "waveform",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
