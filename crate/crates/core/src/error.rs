use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: {got} samples, need at least {need}")]
    InputTooShort { got: usize, need: usize },

    #[error("alignment mismatch: {0}")]
    AlignmentMismatch(String),

    #[error("empty prosody track")]
    EmptyTrack,

    #[error("utterance {0} has no matched L1 rendition")]
    UnpairedUtterance(String),

    #[error("rank solver did not converge (objective {objective:.6e}, gradient norm {grad_norm:.3e})")]
    SolverDiverged { objective: f64, grad_norm: f64 },

    #[error("oracle limited to {max_dim} dims and {max_pairs} pairs, got {dim} dims and {pairs} pairs")]
    OracleTooLarge {
        dim: usize,
        pairs: usize,
        max_dim: usize,
        max_pairs: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("shape error: {0}")]
    ShapeError(String),

    #[error("index {index} out of range for {len} rows")]
    IndexError { index: usize, len: usize },

    #[error("configuration error: {0}")]
    ConfigError(String),

    #[error("intensity {0} outside (0, 1)")]
    IntensityRange(f64),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{path}:{line}: {msg}")]
    ParseError { path: PathBuf, line: usize, msg: String },

    #[error("missing asset {0}")]
    MissingAsset(PathBuf),

    #[error("speaker {speaker} has {count} utterances, need at least {need}")]
    CorpusTooSmall { speaker: u32, count: usize, need: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}
