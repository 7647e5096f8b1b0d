use thiserror::Error;

/// Errors raised by the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed line: {0}")]
    MalformedLine(String),

    #[error("schema violation: {0}")]
    SchemaViolation(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("track too short: {len} plots, need at least {needed}")]
    TrackTooShort { len: usize, needed: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("model is not trained")]
    UntrainedModel,

    #[error("validation set is empty")]
    EmptyValidation,

    #[error("unknown track {session}/{track_id}")]
    UnknownTrack { session: String, track_id: u64 },

    #[error("unknown feature: {0}")]
    UnknownFeature(String),

    #[error("feature {0} has a single value; nothing to manipulate")]
    CardinalityOne(String),

    #[error("unknown session: {0}")]
    UnknownSession(String),

    #[error("setup needs at least two sessions")]
    SingleSession,

    #[error("both classes must be present")]
    OneClassOnly,

    #[error("no positive labels")]
    NoPositives,

    #[error("model file: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
