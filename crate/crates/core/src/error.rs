//! Error type shared by every module of the crate.

use thiserror::Error;

/// Everything that can go wrong while building microstructures, solving cell
/// or macroscopic problems, or assembling effective tensors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field shape mismatch: {0}")]
    Shape(String),

    #[error("inclusions {first} and {second} overlap under periodic wrap-around")]
    Overlap { first: usize, second: usize },

    #[error("matrix phase is disconnected ({components} face-connected components)")]
    DisconnectedMatrix { components: usize },

    #[error("{what} is not elliptic: smallest eigenvalue {min_eigenvalue:e}")]
    Ellipticity { what: String, min_eigenvalue: f64 },

    #[error("declared ellipticity bounds violated by {what}: eigenvalues in [{min:e}, {max:e}], declared [{lower:e}, {upper:e}]")]
    EllipticityBounds {
        what: String,
        min: f64,
        max: f64,
        lower: f64,
        upper: f64,
    },

    #[error("phase contrast {contrast:e} exceeds the supported limit {limit:e}")]
    Contrast { contrast: f64, limit: f64 },

    #[error("charge support error: {0}")]
    Support(String),

    #[error("charge density is not neutral: mean {mean:e}")]
    NonNeutralCharge { mean: f64 },

    #[error("{label}: no convergence after {iterations} iterations (relative residual {residual:e})")]
    Convergence {
        label: String,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("{tensor} violates the Voigt-Reuss bracket by {violation:e}")]
    BoundViolation { tensor: String, violation: f64 },

    #[error("formulas for {quantity} disagree: relative discrepancy {discrepancy:e} > {tolerance:e}")]
    FormulaMismatch {
        quantity: String,
        discrepancy: f64,
        tolerance: f64,
    },

    #[error("kappa[{family}] = {value:e} is not positive")]
    NegativeKappa { family: usize, value: f64 },

    #[error("resolution too coarse: {0}")]
    Resolution(String),

    #[error("fit needs at least 3 usable points, got {points}")]
    Fit { points: usize },

    #[error("grid of {requested} points per axis exceeds the cap of {cap}")]
    MemoryBudget { requested: usize, cap: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable tag used in error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::Shape(_) => "Shape",
            Error::Overlap { .. } => "OverlapError",
            Error::DisconnectedMatrix { .. } => "DisconnectedMatrixError",
            Error::Ellipticity { .. } | Error::EllipticityBounds { .. } => "EllipticityError",
            Error::Contrast { .. } => "ContrastError",
            Error::Support(_) => "SupportError",
            Error::NonNeutralCharge { .. } => "NonNeutralChargeError",
            Error::Convergence { .. } => "ConvergenceError",
            Error::SingularSystem(_) => "SingularSystemError",
            Error::BoundViolation { .. } => "BoundViolationError",
            Error::FormulaMismatch { .. } => "FormulaMismatchError",
            Error::NegativeKappa { .. } => "NegativeKappaError",
            Error::Resolution(_) => "ResolutionError",
            Error::Fit { .. } => "FitError",
            Error::MemoryBudget { .. } => "MemoryBudgetError",
            Error::GridMismatch(_) => "GridMismatchError",
            Error::Io(_) => "IoError",
            Error::Format(_) => "FormatError",
        }
    }

    /// True for failures caused by a configured resource cap.
    pub fn is_resource_cap(&self) -> bool {
        matches!(self, Error::MemoryBudget { .. })
    }
}
