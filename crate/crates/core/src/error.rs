use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty-group: a reward group needs at least one rollout")]
    EmptyGroup,

    #[error("invalid-reward: reward {0} is not binary")]
    InvalidReward(u8),

    #[error("invalid-accuracy: {0} is outside [0, 1]")]
    InvalidAccuracy(f64),

    #[error("invalid-counts: {successes} successes out of {samples} samples")]
    InvalidCounts { samples: usize, successes: usize },

    #[error("invalid-k: k = {k} with n = {samples} samples")]
    InvalidK { k: usize, samples: usize },

    #[error("numerical-overflow: {0}")]
    NumericalOverflow(String),

    #[error("empty-batch: no trajectories to evaluate")]
    EmptyBatch,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed suite file at line {line}: {reason}")]
    SuiteFormat { line: usize, reason: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("run aborted: {0}")]
    Aborted(String),
}

pub type Result<T> = std::result::Result<T, Error>;
