use alloc::string::String;

use crate::node::Stream;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(&'static str),

    #[error("frame mismatch: expected {expected} frame, got {found} frame")]
    FrameMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stream mismatch: expected {expected} map, got {found} map")]
    StreamMismatch { expected: Stream, found: Stream },

    #[error("singular system: {0}")]
    Singular(&'static str),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("invalid box: {0}")]
    InvalidBox(&'static str),

    #[error("malformed payload: {0}")]
    Payload(&'static str),

    #[error("invariant violation: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
