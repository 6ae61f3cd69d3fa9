//! Error types shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while building structures, solving
/// sections, or verifying inequalities.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degree overflow: cannot raise degree {degree} beyond top degree {top}")]
    DegreeOverflow { degree: usize, top: usize },

    #[error("degree underflow: operation needs degree >= 1, got {degree}")]
    DegreeUnderflow { degree: usize },

    #[error("dimension mismatch: expected n = {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate lattice: |det| = {det:e} below threshold")]
    DegenerateLattice { det: f64 },

    #[error("graph escapes the domain ball: |y + sigma(x)| = {norm} >= {limit} at x = {x:?}")]
    DomainEscape { x: Vec<f64>, norm: f64, limit: f64 },

    #[error("vanishing period: |integral of Omega over the zero section| = {magnitude:e}")]
    VanishingPeriod { magnitude: f64 },

    #[error("degenerate structure: {what} dropped to {value:e} of its flat value on the check grid")]
    DegenerateStructure { what: &'static str, value: f64 },

    #[error("smallness violation: contraction factor {factor} >= {limit}, Neumann solve refused")]
    SmallnessViolation { factor: f64, limit: f64 },

    #[error("projection defect {defect:e} above tolerance {tol:e}: target has a component outside the invertible subspace")]
    ProjectionDefect { defect: f64, tol: f64 },

    #[error("solver diverged after {iterations} iterations, last residual {last:e}")]
    SolverDiverged {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("section norm {norm} exceeds the certificate budget delta = {delta}")]
    BudgetViolation { norm: f64, delta: f64 },

    #[error("certificate hypotheses not satisfied: {reason}")]
    CertificateFailed { reason: String },

    #[error("fiber at y = {y:?} failed: {source}")]
    FiberFailed { y: Vec<f64>, source: Box<Error> },

    #[error("group element not compatible: {reason}")]
    IncompatibleGroupElement { reason: String },

    #[error("quadrature undersampled: estimated uncertainty {uncertainty:e} above tolerance {tol:e}")]
    Undersampled { uncertainty: f64, tol: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
