//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad grid sizes, tolerances, missing seeds,
    /// out-of-range parameters, malformed expressions.
    #[error("configuration error: {0}")]
    Config(String),

    /// A query point fell outside the grid domain.
    #[error("point ({x}, {y}) outside grid domain")]
    OutOfDomain { x: f64, y: f64 },

    /// A conditional slice carried negligible weight; the conditional state
    /// is undefined there.
    #[error("degenerate conditional slice at y = {y} (weight {weight:.3e})")]
    DegenerateSlice { y: f64, weight: f64 },

    /// The propagated state lost or gained norm beyond the abort threshold.
    #[error("norm drift {drift:.3e} at t = {t} exceeds abort threshold {threshold:.3e}")]
    NormDrift { t: f64, drift: f64, threshold: f64 },

    /// Too many trajectories left the domain margin.
    #[error("{excluded} of {total} trajectories left the domain margin (quota {quota})")]
    ExcludedQuota {
        excluded: usize,
        total: usize,
        quota: f64,
    },

    /// Ledger closure check failed beyond tolerance.
    #[error("energy-flow closure violated: residual {residual:.3e} at t = {t}")]
    ClosureViolation { t: f64, residual: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures of the numerical pipeline itself (as opposed to
    /// configuration problems); the CLI maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NormDrift { .. } | Error::ExcludedQuota { .. } | Error::ClosureViolation { .. }
        )
    }
}
