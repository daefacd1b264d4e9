use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("declared minimum {point:?} is not a zero of W and its gradient (W={value:e}, |grad|={grad:e})")]
    NotAMinimum { point: Vec<f64>, value: f64, grad: f64 },

    #[error("H2 violated at {point:?}: {reason}")]
    H2Violation { point: Vec<f64>, reason: String },

    #[error("tail window empty on the {side} side: increase the half-length L (currently {half_length})")]
    IncreaseL { side: &'static str, half_length: f64 },

    #[error("no connection found between {from:?} and {to:?}: {reason}")]
    NoConnection { from: Vec<f64>, to: Vec<f64>, reason: String },

    #[error("configuration outside the admissible set: {0}")]
    Domain(String),

    #[error("grid under-resolves eps: {points_per_eps:.1} points per eps-width, need at least {required}")]
    Resolution { points_per_eps: f64, required: f64 },

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    EigenNonConvergence { iterations: usize, residual: f64 },

    #[error("linear solver failed: {0}")]
    Singular(String),

    #[error("fixed-point iteration diverged; trace {trace:?}")]
    Divergence { trace: Vec<f64> },

    #[error("Newton iteration failed after {iterations} iterations (last residual {residual:e})")]
    NewtonFailure { iterations: usize, residual: f64 },

    #[error("existence condition fails: {0}")]
    Refused(String),

    #[error("H4 does not hold, {0} is unsupported")]
    Unsupported(String),

    #[error("state left the tubular neighbourhood of the layer manifold: {0}")]
    OutOfNeighborhood(String),

    #[error("time step underflow at t={t}: dt={dt:e}")]
    Stiffness { t: f64, dt: f64 },

    #[error("missing entry: {0}")]
    Incomplete(String),

    #[error("malformed connection file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
