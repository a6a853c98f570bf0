//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("{what} is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotPsd { what: &'static str, min_eig: f64 },

    #[error("{what} is numerically singular (min eigenvalue {min_eig:.3e} after {jitters} jitter escalations)")]
    Conditioning {
        what: &'static str,
        min_eig: f64,
        jitters: usize,
    },

    #[error("ensemble too small: need at least 2 members, got {0}")]
    InsufficientEnsemble(usize),

    #[error("degenerate posterior: all grid weights are -inf")]
    DegeneratePosterior,

    #[error("optimizer failed to converge: {message} (best objective {best_value:.6e})")]
    Optimization {
        message: String,
        best_point: Vec<f64>,
        best_value: f64,
    },

    #[error("posterior curvature not positive definite even after ridge escalation")]
    Curvature,

    #[error("sampling acceptance rate {rate:.2e} below threshold; posterior support mismatch")]
    SupportMismatch { rate: f64 },

    #[error("particle filter degenerated: effective sample size {ess:.2}")]
    Degeneracy { ess: f64 },

    #[error("unsupported parameter range: {0}")]
    UnsupportedRange(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("filter step {time_index} failed in stage {stage}: {source}")]
    Step {
        time_index: usize,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the assimilation step it occurred in.
    pub fn at_step(self, time_index: usize, stage: &'static str) -> Error {
        Error::Step {
            time_index,
            stage,
            source: Box::new(self),
        }
    }
}
