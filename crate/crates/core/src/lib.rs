//! Stabilized space-time finite element method for interior null
//! controllability of the wave equation.
//!
//! The discrete problem couples a forward state `u`, a backward state `U`
//! (the adjoint, whose restriction to the control region is the control) and
//! two Lagrange multipliers `z`, `Z`. Its Euler-Lagrange system is a
//! symmetric indefinite block matrix assembled by [`system::Discretization::assemble_saddle`]
//! and solved by [`solver`].

pub mod analysis;
pub mod cli;
pub mod config;
pub mod cutoff;
pub mod error;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod system;
pub mod timegrid;

pub use error::{Error, Result};
