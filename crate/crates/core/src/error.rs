use thiserror::Error;

/// Errors raised by the library's numeric and data paths.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("budget violated at iteration {iteration}: {detail}")]
    BudgetViolation { iteration: usize, detail: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate random directions after {0} draws")]
    DegenerateDirections(usize),

    #[error(transparent)]
    Checkpoint(#[from] crate::models::checkpoint::CheckpointError),

    #[error(transparent)]
    Idx(#[from] crate::data::IdxError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
