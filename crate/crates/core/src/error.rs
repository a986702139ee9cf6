use thiserror::Error;

/// Errors raised by the library. Malformed model outputs are data, not
/// errors, so nothing in here is produced by scoring a bad completion.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Well-formed input that violates a data invariant.
    #[error("invalid data: {0}")]
    Data(String),

    #[error("empty window: {0}")]
    EmptyWindow(&'static str),

    #[error("out-of-order batch id {got} (last cached id is {last})")]
    OutOfOrderBatch { got: u64, last: u64 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("unknown reward variant `{0}`")]
    UnknownVariant(String),

    #[error("missing prediction for item `{0}`")]
    MissingPrediction(String),

    #[error("missing log-probabilities: {0}")]
    MissingLogProbs(String),

    #[error("training diverged at step {step}: objective {value} exceeds the divergence bound")]
    Diverged { step: usize, value: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
