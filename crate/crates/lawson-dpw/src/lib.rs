//! Fuchsian systems on the 4-punctured sphere and the DPW monodromy problem
//! for the Lawson minimal surfaces ξ₁,g in the 3-sphere.
//!
//! The pipeline runs through the modules in order: [`loopalg`] supplies 2×2
//! complex algebra and Laurent polynomials in λ, [`fuchsian`] the moduli of
//! Fuchsian systems, [`monodromy`] numerical parallel transport, [`potential`]
//! the symmetric DPW potential, [`solver`] the Newton continuation in the
//! angle t, and [`surface`] the reconstructed immersion and its area.

pub mod checks;
pub mod error;
pub mod fuchsian;
pub mod loopalg;
pub mod monodromy;
pub mod potential;
pub mod solver;
pub mod surface;

pub use error::{Error, ErrorClass, Result};
