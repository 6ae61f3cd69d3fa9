//! Special Lagrangian fibrations on perturbed flat Calabi-Yau models.
//!
//! The library builds the flat reference structure on Tⁿ × B(0, 2r), perturbs
//! it by exact potentials, solves the graph deformation equation for special
//! Lagrangian torus fibers with a quantitatively certified implicit-function
//! iteration, assembles the fibers into an equivariant fibration, and checks
//! the calibrated volume-comparison, injectivity-radius and collapsing
//! inequalities on explicit flat families.

pub mod error;
pub mod fibration;
pub mod flat;
pub mod group;
pub mod solver;
pub mod exec;
pub mod forms;
pub mod lattice;
pub mod rng;

pub use error::{Error, Result};
