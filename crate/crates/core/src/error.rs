use thiserror::Error;

/// Failure modes shared by every solver and experiment driver.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a physical formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// An API was called with inconsistent or unsupported arguments.
    #[error("usage error: {0}")]
    Usage(String),

    /// The requested problem is larger than the backend is configured to handle.
    #[error("capability exceeded: {0}")]
    Capability(String),

    /// Dense integration drifted away from unit trace.
    #[error("integration accuracy: {0}")]
    IntegrationAccuracy(String),

    /// Truncation or bond-dimension convergence could not be certified.
    #[error("convergence failure: {message}")]
    Convergence { message: String, history: Vec<f64> },

    /// A linear-algebra routine failed or produced non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A reduced state violated the preconditions of an entanglement measure.
    #[error("diagnostics: {0}")]
    Diagnostics(String),

    /// A configuration file or flag could not be parsed.
    #[error("parse error (line {line}, key `{key}`): {message}")]
    Parse {
        line: usize,
        key: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(line: usize, key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            key: key.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Usage(_) | Error::Domain(_) => 2,
            Error::Capability(_) => 3,
            Error::Convergence { .. } => 4,
            Error::Numerical(_) | Error::IntegrationAccuracy(_) | Error::Diagnostics(_) => 5,
            Error::Io(_) => 6,
        }
    }
}
