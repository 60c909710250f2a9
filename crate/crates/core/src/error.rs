use std::path::PathBuf;

use thiserror::Error;

/// Error variants shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// No entry of the signal exceeds the marginal threshold.
    #[error("empty support: no entry exceeds threshold {threshold}")]
    EmptySupport { threshold: f64 },

    /// The reference signal of an NMSE computation has zero norm.
    #[error("reference signal has zero norm")]
    ZeroReference,

    /// The clean component passed to the noise generator has zero norm.
    #[error("clean vector has zero norm")]
    ZeroClean,

    /// Operand shapes are inconsistent.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Transport marginals do not form a feasible coupling problem.
    #[error("infeasible marginals: {0}")]
    InfeasibleMarginals(String),

    /// The proximal kernel underflowed to zero rows or columns.
    #[error(
        "numerical underflow: prox_weight {prox_weight} too small for cost scale {cost_scale}"
    )]
    NumericalUnderflow { prox_weight: f64, cost_scale: f64 },

    /// An optimization iterate picked up NaN or infinite entries.
    #[error("non-finite iterate in {context}")]
    NonFiniteIterate { context: &'static str },

    /// The requested letter layout does not fit the grid.
    #[error("letter does not fit: needs at least {min_rows}x{min_cols}, grid is {rows}x{cols}")]
    LetterDoesNotFit {
        rows: usize,
        cols: usize,
        min_rows: usize,
        min_cols: usize,
    },

    /// Component shifts kept colliding after bounded resampling.
    #[error("no collision-free component placement after {attempts} attempts")]
    NoCollisionFreePlacement { attempts: usize },

    /// A measurement operator would have zero rows.
    #[error("measurement rate {rate} yields zero rows")]
    ZeroRows { rate: f64 },

    /// A report was requested from an empty result set.
    #[error("empty result: no records to report")]
    EmptyResult,

    /// A configuration value violates its invariants.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Filesystem failure, annotated with the offending path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Serialization or deserialization failure, annotated with the path.
    #[error("{path}: {source}")]
    Serde {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn serde(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Serde {
            path: path.into(),
            source,
        }
    }
}
