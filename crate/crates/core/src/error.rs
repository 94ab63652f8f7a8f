use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("model singularity: {0}")]
    Singularity(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid track: {0}")]
    InvalidTrack(String),
    #[error("horizon {horizon} exceeds the {steps} steps of the track")]
    HorizonTooLong { horizon: usize, steps: usize },
    #[error("infeasible initial state: {0}")]
    InfeasibleInitialState(String),
    #[error("solver did not converge: {0}")]
    NotConverged(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
