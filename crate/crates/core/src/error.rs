use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// The point lies inside the guard band around the barrier box, where the
    /// inner barrier branch is not evaluated. Callers treat such points as
    /// belonging to the excised set.
    #[error("point is within {distance:.3e} of the barrier box boundary (guard band)")]
    GuardBand { distance: f64 },

    #[error("input channel matrix g0 is singular (condition number {cond:.3e})")]
    SingularChannel { cond: f64 },

    #[error("invalid transient plan: {reason} (residual {residual:.3e})")]
    InvalidPlan { reason: String, residual: f64 },

    #[error("plan family cannot match sigma(0): {0}")]
    UnderParameterized(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("boundary sampler produced no points: {0}")]
    EmptySample(&'static str),

    #[error("state diverged at t = {t} (step {step})")]
    Divergence {
        t: f64,
        step: usize,
        last_finite: Vec<f64>,
    },

    #[error("grid resolution too coarse: {0}")]
    NoManifoldCells(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
