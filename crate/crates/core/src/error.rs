use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid setup: bad mesh layout, bad config value, singular system.
    #[error("configuration error: {0}")]
    Config(String),
    /// Mismatched sizes between related inputs.
    #[error("shape error: {0}")]
    Shape(String),
    /// Non-finite values or a diverged optimization.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Malformed input data (labels out of range, corrupt files).
    #[error("data error: {0}")]
    Data(String),
    /// API misuse, such as calling a hair-only operation with a face code.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("render error: {0}")]
    Render(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category tag used in CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::Data(_) => "data",
            Error::Usage(_) => "usage",
            Error::Render(_) => "render",
            Error::Io { .. } => "io",
        }
    }
}

/// Fails with [`Error::Numeric`] if any value is NaN or infinite.
pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric(format!("{what}: non-finite value at index {i}"))),
        None => Ok(()),
    }
}
