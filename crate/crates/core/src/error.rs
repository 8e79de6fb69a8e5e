use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("{field} {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("quadrature size {got} per axis is below the exactness threshold {required}")]
    QuadratureTooSmall { required: usize, got: usize },

    #[error("mode enumeration of {modes} coefficients exceeds the budget of {budget}")]
    BudgetExceeded { modes: usize, budget: usize },

    #[error("field does not belong to the expected basis")]
    BasisMismatch,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite coefficient at index {index}")]
    NonFinite { index: usize },

    #[error("time t = {t} maps to internal time s = {s}, outside the solved window |s| <= {window}")]
    OutOfWindow { t: f64, s: f64, window: f64 },

    #[error("free propagation to t = {t} needs extended degree {required} (cap {cap}); t_max = {t_max}")]
    AliasingGuard {
        t: f64,
        t_max: f64,
        required: usize,
        cap: usize,
    },

    #[error("divergence at iteration {iteration}, time node {time_node}: norm {norm:e}")]
    Divergence {
        iteration: usize,
        time_node: usize,
        norm: f64,
        history: Vec<f64>,
    },

    #[error("no convergence after {iterations} iterations (last update {last_update:e})")]
    MaxIterations {
        iterations: usize,
        last_update: f64,
        history: Vec<f64>,
    },

    #[error("moment estimate unstable at q = {q}: relative standard error {relative_se:.3}")]
    UnstableEstimate { q: f64, relative_se: f64 },

    #[error("empty fit window: {0}")]
    EmptyFitWindow(String),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("zero input field")]
    ZeroField,

    #[error("eigenvalue iteration did not converge")]
    NoConvergence,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LabError {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::InvalidParameter { .. } => "invalid_parameter",
            LabError::QuadratureTooSmall { .. } => "quadrature_too_small",
            LabError::BudgetExceeded { .. } => "budget_exceeded",
            LabError::BasisMismatch => "basis_mismatch",
            LabError::LengthMismatch { .. } => "length_mismatch",
            LabError::NonFinite { .. } => "non_finite",
            LabError::OutOfWindow { .. } => "out_of_window",
            LabError::AliasingGuard { .. } => "aliasing_guard",
            LabError::Divergence { .. } => "divergence",
            LabError::MaxIterations { .. } => "max_iterations",
            LabError::UnstableEstimate { .. } => "unstable_estimate",
            LabError::EmptyFitWindow(_) => "empty_fit_window",
            LabError::DegenerateGrid(_) => "degenerate_grid",
            LabError::ZeroField => "zero_field",
            LabError::NoConvergence => "no_convergence",
            LabError::Checkpoint(_) => "checkpoint",
            LabError::Io(_) => "io",
        }
    }

    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        LabError::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
