use thiserror::Error;

/// Errors produced by problem construction, schedules, simulation and analysis.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside the range where the object is defined.
    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    /// An argument lies outside the domain of an operation (e.g. `t < t0`).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed to reach its tolerance.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A simulated state became non-finite.
    #[error("trajectory aborted: non-finite state after node {last_valid}")]
    Aborted { last_valid: usize },

    /// A run was refused because a hypothesis it depends on does not hold.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    /// Too many Monte Carlo paths were excluded.
    #[error("run failed: {excluded} of {total} paths aborted (limit 1%)")]
    ExcessiveAborts { excluded: usize, total: usize },

    /// A fixture cannot exercise the requested property.
    #[error("degenerate fixture: {0}")]
    DegenerateFixture(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
