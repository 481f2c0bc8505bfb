use thiserror::Error;

/// Errors raised anywhere in the decoding, planning and evaluation stack.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("logits contain non-finite values")]
    InvalidLogits,
    #[error("temperature must be finite and > 0, got {0}")]
    InvalidTemperature(f64),
    #[error("cannot normalize all-zero weights to a positive target sum")]
    DegenerateWeights,
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("unknown control code `{0}`")]
    UnknownControlCode(String),
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("invalid model file ({location}): {message}")]
    ModelFileInvalid { location: String, message: String },
    #[error("contrast set needs at least 2 codes, got {0}")]
    ContrastSetTooSmall(usize),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("repetition penalty must be >= 1, got {0}")]
    InvalidPenalty(f64),
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("invalid sketch: {0}")]
    InvalidSketch(String),
    #[error("line index {index} out of range for {len} lines")]
    InvalidLineIndex { index: usize, len: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no lexicon for label `{0}`")]
    UnknownLabel(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn model_file(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ModelFileInvalid {
            location: location.into(),
            message: message.into(),
        }
    }

    /// True for failures of an attached model or classifier backend.
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            Error::ProviderUnavailable(_) | Error::VocabMismatch(_) | Error::UnknownControlCode(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
