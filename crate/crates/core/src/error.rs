//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Semantically invalid input (empty vectors, NaN entries, bad parameter ranges).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A client's channel magnitude fell below the usable floor.
    #[error("channel degenerate for client {client}: |h| = {magnitude:.3e} below floor {floor:.3e}")]
    ChannelDegenerate {
        client: usize,
        magnitude: f64,
        floor: f64,
    },

    /// No clients left to aggregate over.
    #[error("empty selection: {0}")]
    EmptySelection(String),

    /// An iterative routine failed to converge or produced non-finite values.
    #[error("numeric failure in {what}: residual {residual:.3e}")]
    NumericFailure { what: String, residual: f64 },

    /// Dirichlet partitioning could not satisfy the per-client minimum.
    #[error("partition infeasible: {attempts} redraws could not give every client at least {min_per_client} samples")]
    PartitionInfeasible {
        attempts: usize,
        min_per_client: usize,
    },

    /// Malformed data file (bad magic number, truncation, count mismatch).
    #[error("data format error in {path}: {reason}")]
    Format { path: String, reason: String },

    /// Configuration parse or cross-field validation failure.
    #[error("config error: {0}")]
    Config(String),

    /// I/O failure annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wrap an I/O error with the path it concerns.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
