use thiserror::Error;

/// Errors surfaced by grid construction, solvers and the diagnostic pipeline.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids ({0})")]
    GridMismatch(String),

    #[error("iterative solver did not converge: residual {residual:.3e} after {iterations} iterations (target {target:.3e})")]
    NonConvergence {
        residual: f64,
        iterations: usize,
        target: f64,
    },

    #[error("Krylov breakdown detected ({0}); retry with the other iteration family")]
    BreakdownDetected(String),

    #[error("transposed generator kernel looks more than one-dimensional: {0}")]
    KernelDimensionSuspect(String),

    #[error("invariant measure has negative values: min {min:.3e} vs max {max:.3e}")]
    NegativeMeasure { min: f64, max: f64 },

    #[error("plateau not reached: anchor-cell tail deviation {deviation:.3e} exceeds {limit:.3e}; increase the half length L")]
    PlateauNotReached { deviation: f64, limit: f64 },

    #[error("tail has not decayed: {0}")]
    TailNotDecayed(String),

    #[error("compatibility failure: {0}")]
    CompatibilityFailure(String),

    #[error("decay fit unstable: {0}")]
    FitUnstable(String),

    #[error("discretization error dominates the homogenization error at the smallest epsilon ({0})")]
    DiscretizationDominates(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("coefficient family error: {0}")]
    Family(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
