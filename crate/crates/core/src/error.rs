use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("co-selection infeasible: {users} users but total server capacity {capacity}")]
    Infeasible { users: usize, capacity: usize },

    #[error("replay buffer not ready: {len} stored, {needed} requested")]
    NotReady { len: usize, needed: usize },

    #[error("training diverged: {0}")]
    Training(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
