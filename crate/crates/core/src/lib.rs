//! Finite-element solver for strongly anisotropic heat equations on
//! rectangles, with asymptotic-preserving (u, q) formulations.
//!
//! The crate is organized bottom-up: [`grid`] and [`fem_basis`] describe the
//! Q2 discretization, [`field`] the anisotropy direction, [`assembly`] and
//! [`linsolve`] the discrete operators and their factorization, [`schemes`]
//! the time integrators, and [`verification`] / [`scenarios`] the drivers.

pub mod assembly;
pub mod error;
pub mod fem_basis;
pub mod field;
pub mod grid;
pub mod linsolve;
pub mod scenarios;
pub mod schemes;
pub mod verification;

pub use error::{Error, Result};
