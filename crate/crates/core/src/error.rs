use thiserror::Error;

/// Errors produced across the network, simulation and margin layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A device or branch references something that does not exist.
    #[error("structural error: {0}")]
    Structural(String),

    /// Newton iteration failed to reach the tolerance.
    #[error("solver diverged after {iterations} iterations (max mismatch {mismatch:.3e} pu)")]
    Diverged { iterations: usize, mismatch: f64 },

    /// A case violates one or more type invariants. Every failure is listed.
    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    /// The case file could not be parsed. `path` is the JSON field path.
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("insufficient generation headroom: requested {requested:.3} MW, available {available:.3} MW")]
    Headroom { requested: f64, available: f64 },

    #[error("bracket error: {0}")]
    Bracket(String),

    #[error("classification error: {0}")]
    Classification(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("unknown contingency '{label}'; available: {}", .available.join(", "))]
    UnknownContingency { label: String, available: Vec<String> },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
