//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("channel is not trace preserving: max deviation {deviation:.3e} exceeds {tol:.1e}")]
    NotTracePreserving { deviation: f64, tol: f64 },
    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:.3e} below -{tol:.1e}")]
    NotPositive { eigenvalue: f64, tol: f64 },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("invalid circuit: {0}")]
    Circuit(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scheduling failed: {0}")]
    Schedule(String),
    #[error("trajectory aborted: {0}")]
    Trajectory(String),
    #[error("decoding failed: {0}")]
    Decode(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
