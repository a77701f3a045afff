use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    /// `agent` is the edge index, or `N_e` for the center agent.
    #[error("invalid action from agent {agent}: {reason}")]
    InvalidAction { agent: usize, reason: String },

    #[error("degenerate geometry: zero distance between transmitter and receiver")]
    DegenerateGeometry,

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("backward called without a cached forward pass")]
    MissingCache,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("insufficient data: need {needed}, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("empty series")]
    EmptySeries,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn action(agent: usize, reason: impl Into<String>) -> Self {
        Error::InvalidAction {
            agent,
            reason: reason.into(),
        }
    }
}
