use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid lattice, grid, or experiment parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// A point, cell, or cone that falls outside the simulated domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A query that does not land exactly on the lattice.
    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The requested statistic is undefined for this input (e.g. zero variance).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric failure in replicate with seed {seed}: {what}")]
    Numeric { seed: u64, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
