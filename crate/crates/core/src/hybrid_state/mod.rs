//! Hybrid states on a discretized classical phase space.

pub mod grid;
pub mod state;

pub use grid::{Axis, PhaseGrid, ScalarField};
pub use state::{
    classical_density, classical_marginal, conditional_quantum_state, expectation, min_spectrum, product_state,
    quantum_marginal, ClassicalDensity, HybridDensity, HybridObservable, MatrixField, QuantumDensity,
};
