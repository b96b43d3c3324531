use thiserror::Error;

/// Errors shared by every module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A structural requirement on the lattice or configuration is violated.
    #[error("spec error: {0}")]
    Spec(String),
    /// Quadrature, fit or series failed to reach the requested accuracy.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A lookup fell outside the precomputed range.
    #[error("range error: {0}")]
    Range(String),
    /// Bisection could not bracket a sign change.
    #[error("search error: {message} (low endpoint: {low}, high endpoint: {high})")]
    Search { message: String, low: String, high: String },
    /// A least-squares fit was ill-posed.
    #[error("fit error: {0}")]
    Fit(String),
    /// The requested computation exceeds configured resource limits.
    #[error("resource error: {0}")]
    Resource(String),
    /// Filesystem or serialization failure.
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag used in JSON error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Spec(_) => "spec",
            Error::Numeric(_) => "numeric",
            Error::Range(_) => "range",
            Error::Search { .. } => "search",
            Error::Fit(_) => "fit",
            Error::Resource(_) => "resource",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
