use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("simulation spec error: {0}")]
    Spec(String),
}

impl Error {
    /// True for failures caused by the caller's inputs rather than the numerics.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Numeric(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
