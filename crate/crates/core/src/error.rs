use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("fixed-point overflow: {0}")]
    Overflow(String),
    #[error("input {value} outside lookup-table range")]
    Range { value: String },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("level {level} cannot be encoded in {timesteps} timesteps")]
    Capacity { level: i64, timesteps: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("missing energy component `{0}`")]
    MissingComponent(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
