use std::io;

use thiserror::Error;

/// Errors produced anywhere in the engine.
///
/// The variants fall into three families that the command-line front end maps
/// onto distinct exit codes: validation problems, numeric divergence and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported sample rate: {0} Hz (expected 16000)")]
    UnsupportedSampleRate(u32),
    #[error("unsupported channel count: {0} (expected mono)")]
    UnsupportedChannels(u16),
    #[error("unsupported sample format: {0}")]
    UnsupportedFormat(String),
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("degenerate mixing input: {0}")]
    DegenerateMix(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("corrupt weight file: {0}")]
    CorruptWeights(String),
    #[error("unsupported weight file version {0}")]
    UnknownVersion(u32),
    #[error("missing tensor in manifest: {0}")]
    MissingTensor(String),
    #[error("incomplete tape: {0}")]
    IncompleteTape(&'static str),
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("stream is closed")]
    StreamClosed,
    #[error("wav error: {0}")]
    Wav(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Diverged(_))
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => Error::Io(io),
            other => Error::Wav(other.to_string()),
        }
    }
}
