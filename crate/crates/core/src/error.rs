use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("locations {first} and {second} coincide within {tolerance:e} ({s1}, {s2})")]
    DuplicateLocation {
        first: usize,
        second: usize,
        tolerance: f64,
        s1: f64,
        s2: f64,
    },

    #[error("{context}: matrix is not positive definite even with ridge {ridge:e}")]
    Factorization { context: String, ridge: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite log posterior at initialization ({0}); consider rescaling the data")]
    NonFiniteInit(String),

    #[error("parameter not identifiable: {0}")]
    NonIdentifiable(String),

    #[error("event {index} at ({s1}, {s2}) lies outside the window")]
    OutsideWindow { index: usize, s1: f64, s2: f64 },

    #[error("{failed} of {total} per-draw factorizations failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
