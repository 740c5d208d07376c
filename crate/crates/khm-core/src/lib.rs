//! Spectral laboratory for exact third-order laws in electron and Hall
//! magnetohydrodynamics on the periodic box.
//!
//! * [`grid`]: lattice, FFTs, spectral operators, snapshot files
//! * [`mollify`]: radial kernels, the φ_L / φ_T split, smoothing operators
//! * [`increments`]: direction sets, increments, shell averages
//! * [`identities`]: numerical checks of the algebraic identities
//! * [`solver`]: EMHD and Hall-MHD time integration with invariant tracking
//! * [`laws`]: structure functions, dissipation functionals, balance audits

pub mod error;
pub mod grid;
pub mod identities;
pub mod increments;
pub mod laws;
pub mod mollify;
pub mod par;
pub mod quadrature;
pub mod solver;

pub use error::{KhmError, Result};
