//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by estimation, table construction and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The input data violate a structural requirement (shape, finiteness).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// The weighted normal matrix is singular and the ridge fallback also failed.
    #[error("rank-deficient weighted design: {0}")]
    RankDeficient(String),

    /// An iteration produced non-finite values or failed to make progress.
    #[error("iteration diverged: {0}")]
    Divergence(String),

    /// All robust weights vanished; the starting point is outside the basin
    /// where the redescending loss gives any observation positive weight.
    #[error("degenerate weights: every residual exceeds the loss cutoff")]
    DegenerateWeights,

    /// The m-table could not be built (non-monotone values, bad grid).
    #[error("m-table build failed: {0}")]
    TableBuild(String),

    /// A cached m-table did not match the requested configuration.
    #[error("m-table cache rejected: {0}")]
    TableCache(String),

    /// A matrix decomposition failed to converge.
    #[error("numerical decomposition failed: {0}")]
    Numerical(String),

    /// A leave-one-out column of the sensitivity matrix could not be computed.
    #[error("sensitivity column {index} failed: {source}")]
    SensitivityColumn {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// Every candidate in a candidate set failed to fit.
    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
