use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter set that cannot describe a valid system or algorithm run.
    #[error("configuration error: {0}")]
    Config(String),
    /// Data handed to an operation violates its preconditions.
    #[error("input error: {0}")]
    Input(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
