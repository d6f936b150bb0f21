use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("rate {rate:.3e} is below the floor {floor:.1e} where the impact derivative is singular")]
    SingularRate { rate: f64, floor: f64 },

    #[error("exponent {exponent:.3} exceeds the overflow cap {cap}")]
    ExponentOverflow { exponent: f64, cap: f64 },

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("trajectory violates boundary conditions: {0}")]
    BoundaryViolation(String),

    #[error("degenerate Lagrangian: {0}")]
    DegenerateLagrangian(String),

    #[error("initial-slope bracket [{lo:.6}, {hi:.6}] does not straddle the terminal target (misses {miss_lo:.3e} and {miss_hi:.3e})")]
    BracketFail { lo: f64, hi: f64, miss_lo: f64, miss_hi: f64 },

    #[error("solver did not converge after {iterations} iterations ({detail})")]
    NoConvergence { iterations: usize, detail: String },

    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("ODE state blew up at t = {t:.6}: {detail}")]
    OdeBlowUp { t: f64, detail: String },
}
