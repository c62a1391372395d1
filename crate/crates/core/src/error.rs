use thiserror::Error;

/// Errors raised across the simulator, estimator and protocol layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mode index {mode} out of range for a layout with {n_modes} modes")]
    ModeOutOfRange { mode: usize, n_modes: usize },

    #[error("layout needs {requested} modes but the cap is {cap}; use a smaller system")]
    ModeCapExceeded { requested: usize, cap: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("operator is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("unsupported reshaping distribution: {0}")]
    UnsupportedDistribution(String),

    #[error("unsupported experiment: {0}")]
    UnsupportedExperiment(String),

    #[error("schedule needs {needed} generations, above the cap of {cap}")]
    ScheduleTooDeep { needed: usize, cap: usize },

    #[error("estimation input is empty")]
    EmptyCounts,

    #[error("combination ledger is cyclic or under-determined: {0}")]
    CyclicLedger(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
