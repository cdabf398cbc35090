use thiserror::Error;

/// Errors produced by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("query outside tabulated range: {0}")]
    OutOfRange(String),

    #[error("grid is not uniform: {0}")]
    NonUniformGrid(String),

    #[error("undefined state: {0}")]
    UndefinedState(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no peaks above the {threshold_db} dB threshold")]
    NoPeaks { threshold_db: f64 },

    #[error("curve undersampled: {0}")]
    Undersampled(String),

    #[error("no fringe structure: {0}")]
    NoFringe(String),

    #[error("amplitude is not normalized (norm = {0})")]
    Unnormalized(f64),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid-grid",
            Error::OutOfRange(_) => "out-of-range",
            Error::NonUniformGrid(_) => "non-uniform-grid",
            Error::UndefinedState(_) => "undefined-state",
            Error::InvalidInput(_) => "invalid-input",
            Error::NoPeaks { .. } => "no-peaks",
            Error::Undersampled(_) => "undersampled",
            Error::NoFringe(_) => "no-fringe",
            Error::Unnormalized(_) => "unnormalized",
            Error::Empty(_) => "empty",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
