use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("distribution is not normalized (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("did not converge after {iterations} iterations (last change {last_change:e})")]
    NotConverged { iterations: usize, last_change: f64 },

    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: u64, reason: String },

    #[error("unknown environment `{0}`")]
    UnknownEnv(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("rollout aborted after {completed} steps: {reason}")]
    PartialRollout { completed: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
