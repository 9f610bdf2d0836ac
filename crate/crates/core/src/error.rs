use std::path::PathBuf;

/// Errors produced by the clustering pipeline, generators and file loaders.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes of two inputs disagree, or a requested rank exceeds the dimension.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// A numeric input violates a precondition (non-finite entries, asymmetry, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration value is missing or out of range.
    #[error("configuration error: {0}")]
    Config(String),

    /// A file or in-memory dataset could not be turned into views / distances.
    #[error("ingestion error in {source_name}: {message}")]
    Ingestion {
        source_name: String,
        message: String,
    },

    /// One or more views have zero estimated noise or a vanishing K-th eigenvalue.
    #[error("degenerate view(s) {views:?}: {reason}")]
    DegenerateView { views: Vec<usize>, reason: String },

    /// A decomposition failed to converge or produced unusable output.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn ingestion(source_name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Ingestion {
            source_name: source_name.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 for configuration problems, 3 for ingestion failures and 4 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension { .. } | Error::Input(_) => 2,
            Error::Ingestion { .. } | Error::Io { .. } => 3,
            Error::DegenerateView { .. } | Error::Numerical(_) => 4,
        }
    }
}
