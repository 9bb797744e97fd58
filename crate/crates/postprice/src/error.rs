use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid tolerance: {0}")]
    InvalidTolerance(String),

    #[error("quadrature did not converge: best estimate {best:e}, residual error {error:e} exceeds target {target:e}")]
    QuadratureDidNotConverge { best: f64, error: f64, target: f64 },

    #[error("integrand is not finite at t = {t}")]
    NonFiniteIntegrand { t: f64 },

    #[error("no sign change on bracket [{lo}, {hi}]: f(lo) = {f_lo:e}, f(hi) = {f_hi:e}")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("root bisection hit the iteration cap ({max_iter}) at bracket width {width:e}")]
    RootIterationCap { max_iter: usize, width: f64 },

    #[error("ODE state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("discount function rejected at t = {t}: {reason}")]
    InvalidDiscount { t: f64, reason: String },

    #[error("discount vanished (xi(t) <= 1e-12) at t = {t}; zeta is not queryable there")]
    VanishingDiscount { t: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operation `{op}` does not support the {kind} distribution")]
    UnsupportedDistribution { op: &'static str, kind: &'static str },

    #[error("operation `{op}` requires a time-indexed pricing strategy, got {kind}")]
    NotTimeIndexed { op: &'static str, kind: &'static str },

    #[error("strategy is unsupported by the analytic revenue formula: {0}")]
    UnsupportedStrategy(String),

    #[error("mechanism construction failed: {0}")]
    Construction(String),

    #[error("internal consistency check failed: {0}")]
    Inconsistency(String),

    #[error("revenue curve grids differ at index {index}: {left} vs {right}")]
    GridMismatch { index: usize, left: f64, right: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
