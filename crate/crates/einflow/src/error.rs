use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Error, Debug)]
pub enum EinflowError {
    #[error("axis {axis} out of range for a {dim}-dimensional grid")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("fields live on different grids ({0})")]
    GridMismatch(String),

    #[error("tensor index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("symmetry violation in {class}: relative residual {residual:.3e} exceeds budget {budget:.3e}")]
    SymmetryViolation {
        class: &'static str,
        residual: f64,
        budget: f64,
    },

    #[error("metric is not positive definite at grid point {point} (Cholesky failed)")]
    MetricNotPositiveDefinite { point: usize },

    #[error("derivative order {k} too high: {reason}")]
    OrderTooHigh { k: usize, reason: String },

    #[error("time must be positive, got t = {0}")]
    NonpositiveTime(f64),

    #[error("CFL violation: {0}")]
    CflViolation(String),

    #[error("perturbation support reached the frozen collar: {0}")]
    SupportEscaped(String),

    #[error("validator blowup: {0}")]
    ValidatorBlowup(String),

    #[error("config error: {0}")]
    ConfigParse(String),

    #[error("decay fit window too small: {0}")]
    WindowTooSmall(String),

    #[error("decay fit requires positive values: {0}")]
    NonpositiveValues(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, EinflowError>;
