use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter {field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("integral did not converge: {0}")]
    DivergentIntegral(String),

    #[error("index slot ({0},{1})({2},{3}) defined twice")]
    IndexCollision(usize, usize, usize, usize),

    #[error("truncation error {estimate:.3e} exceeds tolerance {tolerance:.3e}")]
    Truncation { estimate: f64, tolerance: f64 },

    #[error("contour window too narrow: boundary/peak ratio {ratio:.3e}")]
    WindowTooNarrow { ratio: f64 },

    #[error("fixed point did not converge at step {step} after {iters} iterations (last change {change:.3e})")]
    NonConvergence { step: usize, iters: usize, change: f64 },

    #[error("continued fraction not converged at z = {z}: Cauchy difference {difference:.3e} at depth {depth}")]
    FractionNotConverged {
        z: Complex64,
        depth: usize,
        difference: f64,
    },

    #[error("singular matrix at {context} (condition estimate {condition:.3e})")]
    Singular { context: String, condition: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("density matrix is not Hermitian (deviation {0:.3e})")]
    NonHermitian(f64),

    #[error("photon cutoff {n_max} too small for initial photon number {p}")]
    Cutoff { n_max: usize, p: usize },

    #[error("parameter constraint violated: {0}")]
    Constraint(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field: field.to_string(),
        reason: reason.into(),
    }
}
