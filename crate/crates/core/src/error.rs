use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments: wrong dimensions, out-of-range values.
    #[error("input error: {0}")]
    Input(String),

    /// A matrix or system failed a certification requirement.
    #[error("certification error: {0}")]
    Certification(String),

    /// A bounded-state process left its admissible set.
    #[error("state corruption: {0}")]
    StateCorruption(String),

    #[error("divergence at step {step}{}: {detail}", path.map(|p| format!(" (path {p})")).unwrap_or_default())]
    Divergence {
        step: usize,
        path: Option<u64>,
        detail: String,
    },

    #[error("configuration error: {0}")]
    Configuration(String),

    /// An operation needs data the caller did not provide (e.g. Hessians).
    #[error("capability error: {0}")]
    Capability(String),

    /// Argument outside the mathematical domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("optimization error: {0}")]
    Optimization(String),

    /// The operation's theorem scope is not met.
    #[error("precondition error: {0}")]
    Precondition(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn context(self, ctx: impl Into<String>) -> Self {
        Error::Context {
            context: ctx.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) fn check_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Input(format!(
            "{what}: dimension mismatch (got {got}, expected {want})"
        )));
    }
    Ok(())
}
