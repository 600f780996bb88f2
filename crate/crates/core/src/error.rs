use thiserror::Error;

/// Errors raised by the annotation model outside of validation.
///
/// Validation problems are reported as [`crate::model::Violation`] values,
/// not as errors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid sample rate: {0}")]
    InvalidRate(String),
    #[error("invalid scheme: {0}")]
    InvalidScheme(String),
    #[error("frame_ms must be positive")]
    ZeroFrame,
    #[error("empty span [{0}, {1})")]
    EmptySpan(u64, u64),
    #[error("span {span_ms} ms is not divisible by frame {frame_ms} ms")]
    NonDivisibleSpan { span_ms: u64, frame_ms: u64 },
    #[error("expected a {expected} annotation, found {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("empty track")]
    EmptyTrack,
    #[error("invalid identifier {0:?}")]
    InvalidIdentifier(String),
}
