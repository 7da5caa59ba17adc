/// Error type shared across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("eigensolver failed to converge: {0}")]
    Convergence(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("build error: {0}")]
    Build(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("numerical instability: {0}")]
    Instability(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
