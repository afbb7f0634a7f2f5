use thiserror::Error;

/// Errors raised by the laboratory.
///
/// The variants line up with the CLI exit codes: `Usage` and `Config` map to
/// exit code 2, `Domain` and `Internal` to 3.
#[derive(Debug, Error)]
pub enum LabError {
    /// Caller passed arguments that cannot be used (dimension mismatch,
    /// out-of-grid node, bad stencil radius).
    #[error("usage error: {0}")]
    Usage(String),
    /// Arguments are well formed but fall outside the operation's domain
    /// (vector not timelike, point too close to the boundary, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// An invariant the library relies on was violated.
    #[error("internal error: {0}")]
    Internal(String),
    /// Experiment configuration could not be parsed or validated.
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Usage(msg.into()))
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Domain(msg.into()))
}
