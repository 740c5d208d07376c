use thiserror::Error;

#[derive(Debug, Error)]
pub enum KhmError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("CFL violation at t = {t}: dt = {dt} exceeds the limit {limit}")]
    Cfl { t: f64, dt: f64, limit: f64 },
    #[error("non-finite value in the state at t = {0}")]
    NonFinite(f64),
    #[error("snapshot format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KhmError>;
