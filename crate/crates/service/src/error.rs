use cpm_core::CpmError;
use thiserror::Error;

pub type ServiceResult<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] CpmError),

    #[error("{0}")]
    Conflict(String),

    #[error("{0}")]
    Usage(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
