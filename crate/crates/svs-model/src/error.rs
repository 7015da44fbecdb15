//! Model-side errors.

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] svs_core::Error),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error("checkpoint was trained under config {stored} but runtime config hashes to {runtime}")]
    ConfigHashMismatch { stored: String, runtime: String },

    #[error("non-finite loss at step {step} (batch {batch}); aborting")]
    NonFiniteLoss { step: u64, batch: String },

    #[error("checkpoint write failed: {0}")]
    CheckpointWriteFailure(String),

    #[error("checkpoint read failed: {0}")]
    CheckpointReadFailure(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}
