use thiserror::Error;

/// Errors produced by the analysis toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("empty input")]
    EmptyInput,

    #[error("config error: {0}")]
    Config(String),

    #[error("sequence of {len} tokens exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("layer {layer} out of range for a model with {n_layers} layers")]
    LayerOutOfRange { layer: usize, n_layers: usize },

    #[error("unsupported hook: {0}")]
    UnsupportedHook(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("series too short: need at least {min} points, got {len}")]
    TooShort { len: usize, min: usize },

    #[error("unit {unit} out of range (D = {units})")]
    UnitOutOfRange { unit: usize, units: usize },

    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("infeasible layer ladder: {0}")]
    InfeasibleLadder(String),

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("bad range: {0}")]
    BadRange(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
