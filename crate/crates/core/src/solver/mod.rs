//! The deformation engine: residual functional, Hodge Dirac inversion with
//! Neumann-series perturbation, quantitative-IFT certification, and the
//! certified section solver.

mod dirac;
mod engine;
mod residual;

pub use dirac::{neumann_invert, random_b1_direction, random_b2_target, DiracOperator, NeumannLog};
pub use engine::{
    certify_hypotheses, CertifyOptions, ConvergenceLog, IFTCertificate, SectionSolver, SolveMode,
};
pub use residual::{DeformationMap, FrozenLinearization, GraphSection, Residual};

use crate::forms::NormParams;
use serde::{Deserialize, Serialize};

/// Knobs shared by every solver stage.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverParams {
    /// Fourier cutoff K of sections and residuals.
    pub cutoff: i32,
    pub norms: NormParams,
    /// Surrogate-residual convergence tolerance of solve_section.
    pub tol: f64,
    pub max_iter: usize,
    /// Probe directions for sampled operator norms.
    pub probes: usize,
    pub probe_seed: u64,
    /// Relative term cutoff of the Neumann series.
    pub neumann_term_tol: f64,
    /// Largest tolerated L² defect when projecting targets onto 𝔅₂.
    pub projection_tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            cutoff: 8,
            norms: NormParams::default(),
            tol: 1e-10,
            max_iter: 200,
            probes: 64,
            probe_seed: 0xD17AC,
            neumann_term_tol: 1e-14,
            projection_tol: 1e-9,
        }
    }
}
