use thiserror::Error;

/// Errors raised by model construction, approximation and sampling.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("observation {index}: response {value} outside the support of {family}")]
    Support {
        index: usize,
        value: f64,
        family: &'static str,
    },

    #[error("likelihood domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The matrix handed to the Cholesky factorization was not positive
    /// definite; `pivot` is the (original) index at which it failed.
    #[error("matrix not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("indefinite Newton system at iteration {iteration}")]
    IndefiniteSystem { iteration: usize },

    #[error("no convergence after {iterations} iterations: {what}")]
    NonConvergence { what: String, iterations: usize },

    #[error("skewness {0} outside the attainable range of the skew-normal family")]
    SkewnessOutOfRange(f64),

    #[error("latent dimension {dim} exceeds the dense limit {limit}; use the blocked path")]
    DenseLimitExceeded { dim: usize, limit: usize },

    #[error("density grid too narrow: tail mass {0:e}")]
    GridTooNarrow(f64),

    #[error("hyperparameter mode search failed: {0}")]
    ModeSearch(String),

    #[error("oracle: {0}")]
    Oracle(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An error raised inside one stage of the INLA pipeline.
    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: Box<Error> },

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    /// The innermost error, with stage wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
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

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
