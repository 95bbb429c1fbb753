use thiserror::Error;

/// Errors raised by the cone laboratory.
#[derive(Debug, Error)]
pub enum ConeError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular input: {0}")]
    Singular(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("solver failed at exhaustion stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<ConeError>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ConeError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConeError::Domain(msg.into()))
}
