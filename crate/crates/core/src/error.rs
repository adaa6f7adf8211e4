use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented precondition (bad shape, out-of-range
    /// parameter, non-finite value, ...).
    #[error("validation: {0}")]
    Validation(String),

    /// Training produced a non-finite loss. Carries a description of the
    /// offending step and an echo of the run configuration.
    #[error("divergence: {0}")]
    Divergence(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for shape-mismatch validation errors.
pub(crate) fn shape_err(what: &str, expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Error {
    Error::Validation(format!("{what}: expected shape {expected:?}, got {got:?}"))
}
