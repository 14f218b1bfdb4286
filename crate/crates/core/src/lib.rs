//! Hybrid quantum-classical dynamics on phase-space grids: states, brackets,
//! noise-blurred master equations, lattice gravity kernels, reduced quantum
//! master equations and the single-mode nonrelativistic limit.

pub mod checks;
pub mod config;
pub mod error;
pub mod evolution;
pub mod gravity_kernel;
pub mod hybrid_state;
pub mod linalg;
pub mod nonrel_limit;
pub mod reduced_lindblad;
pub mod run;
pub mod units;

pub use error::{Error, Result};
pub use units::Units;
