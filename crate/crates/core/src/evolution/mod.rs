//! Brackets, the Aleksandrov and hybrid master equations, fixed-step
//! integration and the stochastic unraveling.

pub mod brackets;
pub mod hamiltonian;
pub mod integrate;
pub mod rhs;
pub mod unravel;

pub use brackets::{poisson_bracket, poisson_bracket_with, Bracket, Differentiator, Operand, Scheme};
pub use hamiltonian::{positivity_condition_check, Coupling, HybridHamiltonian, NoiseModel, PositivityReport};
pub use integrate::{evolve, evolve_generator, Evolution, IntegratorParams, MonitorLog, MonitorRecord, Monitors};
pub use rhs::{aleksandrov_rhs, dirac_term, hybrid_master_rhs, Generator};
pub use unravel::{unravel_ensemble, TrajectoryEnsemble};
