use thiserror::Error;

/// Errors raised across the toolkit. Each variant maps to one failure class
/// so callers (the CLI, the HTTP service) can translate it into an exit code
/// or status without string matching.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or grid shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// An operation parameter is outside its valid domain.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// NaN/Inf appeared in a loss, gradient or parameter.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// API misuse, e.g. calling backward twice on one tape.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    /// Input data is incomplete or inconsistent.
    #[error("data error: {0}")]
    Data(String),
    /// A file does not follow its declared format.
    #[error("format error: {0}")]
    Format(String),
    #[error("selection error: {0}")]
    Selection(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(format!($($arg)*)))
    };
}
pub(crate) use bail;
