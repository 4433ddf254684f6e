//! Explicit leapfrog time stepping for the acoustic wave equation on
//! domains with re-entrant corners.
//!
//! The spatial discretisation lives on a locally refined (graded) fine mesh,
//! but the time step is chosen for a quasi-uniform coarse mesh: solutions are
//! sought in a reduced space spanned by coarse hat functions minus their
//! fine-scale correctors, which keeps the stiffness spectrum at coarse scale.

pub mod assembly;
pub mod error;
pub mod interp;
pub mod leapfrog;
pub mod linsolve;
pub mod mesh;
pub mod quadrature;
pub mod reduced_space;
pub mod sparse;
pub mod study;

pub use error::{Error, Result};
