//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A spatial block split produced an empty evaluation set.
    #[error("degenerate split: evaluation set empty after {attempts} seed attempts")]
    DegenerateSplit { attempts: usize },

    /// The exposure has no non-spatial variation, so the residual density
    /// (and hence the density ratio) is undefined. Signals a positivity failure.
    #[error("degenerate exposure: residual variance is zero (positivity violation)")]
    DegenerateExposure,

    #[error("exposure variance is zero: design is degenerate")]
    DegenerateDesign,

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("exact GP solve capped at n = {cap}, got n = {n}")]
    CapacityExceeded { n: usize, cap: usize },

    #[error("dataset does not retain structural noise; counterfactuals unavailable")]
    UnsupportedDataset,

    #[error("all {folds} cross-fit folds were degenerate")]
    CrossfitFailure { folds: usize },

    #[error("bootstrap failure: {failed} of {total} resample fits failed")]
    BootstrapFailure { failed: usize, total: usize },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown method: {0}")]
    UnknownMethod(String),

    #[error("unknown scenario: {0}")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
