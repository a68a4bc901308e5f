use thiserror::Error;

/// Errors surfaced by the dialogue environment, the learners and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown domain `{0}`")]
    Domain(String),

    #[error("constraint error: {0}")]
    Constraint(String),

    #[error("malformed dialogue act: {0}")]
    Act(String),

    #[error("act not in catalog: {0}")]
    Catalog(String),

    #[error("missing template: {0}")]
    Template(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("stale activation tape (tape version {tape}, network version {network})")]
    StaleTape { tape: u64, network: u64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
