use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants split into two families: input problems (structural, config,
/// parse, domain, classification, precondition, io) and numerical failures
/// (numerical, non-convergence, internal consistency). The CLI maps the first
/// family to exit status 1 and the second to exit status 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("classification error: {0}")]
    Classification(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("non-finite value at state {state}, action {action}")]
    Numerical { state: usize, action: usize },
    #[error("no convergence after {iterations} iterations (last delta {delta:e})")]
    NonConvergence { iterations: usize, delta: f64 },
    #[error("internal consistency check failed: {0}")]
    Consistency(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical { .. } | Error::NonConvergence { .. } | Error::Consistency(_) => true,
            Error::Context { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
