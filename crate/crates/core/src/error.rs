use thiserror::Error;

/// Errors raised anywhere in the learner, the harness or the config layer.
#[derive(Debug, Error)]
pub enum PalError {
    /// A caller handed in something malformed: wrong shape, non-finite data,
    /// a violated precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// A factorization or solve broke down (matrix not positive definite).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A config value failed validation. `key` is the dotted path of the
    /// offending field, e.g. `stream.num_tasks`.
    #[error("invalid config value for `{key}`: {message}")]
    Config { key: String, message: String },

    /// A config file failed to parse or validate, located to a line.
    #[error("{file}:{line}: {message}")]
    ConfigAt {
        file: String,
        line: usize,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PalError>;

pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(PalError::Input(msg.into()))
}

pub(crate) fn config_err<T>(key: &str, msg: impl Into<String>) -> Result<T> {
    Err(PalError::Config {
        key: key.to_string(),
        message: msg.into(),
    })
}

impl PalError {
    /// True for errors caused by the configuration rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(self, PalError::Config { .. } | PalError::ConfigAt { .. })
    }
}
