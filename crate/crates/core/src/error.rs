use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Exhaustive resonance enumeration would visit more tuples than allowed.
    #[error("non-resonance check infeasible: {tuples} tuples exceed the cap of {cap}")]
    Infeasible { tuples: u128, cap: u128 },

    /// Frequency multipliers violate the non-resonance condition.
    #[error("frequencies are resonant: witness (mu_i, nu_i) = {witness:?}")]
    Resonant { witness: Vec<(i64, i64)> },

    #[error("word needs {required} derivatives but the cost model provides {available}")]
    InsufficientSmoothness { required: usize, available: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("not enough usable points for a fit: need {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// The residual is too close to the integrator's own error to give an order.
    #[error("residual {residual:.3e} is below 10x the integrator error floor {floor:.3e}")]
    NotMeasurable { residual: f64, floor: f64 },

    /// State left the finite range `|x| <= 1e12` during integration.
    #[error("integration diverged at t = {time:.6e}")]
    Diverged { time: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
