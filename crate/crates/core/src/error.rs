use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// Each variant maps to one machine-parsable category (see [`Error::category`]),
/// which the command-line front end turns into an exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("filter design failed: {0}")]
    Design(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("schema error in {path}: missing columns {missing:?}")]
    Schema { path: String, missing: Vec<String> },

    #[error("parse error in {path} at row {row}: {msg}")]
    Parse { path: String, row: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
    }

    /// Short stable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
            Error::Numeric(_) => "numeric",
            Error::Contract(_) => "contract",
            Error::Design(_) => "design",
            Error::Unsupported(_) => "unsupported",
            Error::Schema { .. } => "schema",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
