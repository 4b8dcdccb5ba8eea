use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("enumerating {what} needs {count} items, cap is {cap}")]
    EnumerationTooLarge {
        what: &'static str,
        count: f64,
        cap: usize,
    },
    #[error("reward kind mismatch: {0}")]
    RewardKindMismatch(String),
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid reward: {0}")]
    InvalidReward(String),
    #[error("degenerate link: minimum derivative {0:e}")]
    DegenerateLink(f64),
    #[error("epsilon must lie in (0, 1], got {0}")]
    InvalidEpsilon(f64),
    #[error("delta must lie in (0, 1], got {0}")]
    InvalidDelta(f64),
    #[error("no convergence after {iters} iterations (gradient norm {grad_norm:e})")]
    DidNotConverge { iters: usize, grad_norm: f64 },
    #[error("margin profile cannot be fitted: {0}")]
    DegenerateProfile(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("need at least {needed} N-levels with positive means, got {got}")]
    InsufficientLevels { needed: usize, got: usize },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn too_large(what: &'static str, count: f64, cap: usize) -> Error {
    Error::EnumerationTooLarge { what, count, cap }
}
