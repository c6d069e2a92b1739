use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is outside its admissible range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Rejection sampling or spawning gave up after its attempt budget.
    #[error("generation failed: {0}")]
    Generation(String),

    /// A pose or path query that violates a geometric precondition.
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("shape mismatch in {context}: {message}")]
    Shape { context: String, message: String },

    /// NaN or infinite values in a loss, gradient or activation.
    #[error("numerical failure: {0}")]
    NonFinite(String),

    /// An operation was called in a state that does not permit it,
    /// e.g. backward before forward or stepping a finished episode.
    #[error("invalid state: {0}")]
    State(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}
