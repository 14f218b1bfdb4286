//! Error types shared across the crate.

use thiserror::Error;

/// Failures while constructing or querying hybrid states.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix is not Hermitian (residual {residual:e})")]
    NonHermitian { residual: f64 },
    #[error("state is not normalized (total {total})")]
    NotNormalized { total: f64 },
    #[error("density is negative at {index} (value {value:e})")]
    NegativeDensity { index: usize, value: f64 },
    #[error("quantum state is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositive { min_eigenvalue: f64 },
    #[error("classical density {density:e} at point {point} is too small to condition on")]
    DegenerateConditioning { point: usize, density: f64 },
}

/// Failures of the hybrid evolution and its Monte-Carlo unraveling.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolutionError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error("noise matrix {name} is not symmetric positive semidefinite ({detail})")]
    InvalidNoise { name: &'static str, detail: String },
    #[error("classical density leaks into the grid boundary at t = {t} (ratio {ratio:e})")]
    BoundaryLeak { t: f64, ratio: f64 },
    #[error("normalization drift {drift:e} at t = {t}")]
    TraceDrift { t: f64, drift: f64 },
    #[error("state norm grew by a factor {growth} at t = {t}")]
    StepUnstable { t: f64, growth: f64 },
    #[error("trajectory ensembles need an explicit seed")]
    NonReproducibleSeed,
    #[error("invalid integrator parameters: {0}")]
    InvalidParams(String),
}

/// Failures of lattice kernel constructions.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("mass center {center:?} is closer than 3 sigma to the lattice edge")]
    OutOfLattice { center: [f64; 3] },
    #[error("lattice mismatch: {0}")]
    LatticeMismatch(String),
    #[error("zero wavevector has no finite kernel transform")]
    ZeroMode,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Failures of the reduced quantum master equation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LindbladError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("normalization drift {drift:e} at t = {t}")]
    TraceDrift { t: f64, drift: f64 },
    #[error("state norm grew by a factor {growth} at t = {t}")]
    StepUnstable { t: f64, growth: f64 },
    #[error("coherence ({i},{j}) varies by only {variation:e} over the window")]
    InsufficientDecay { i: usize, j: usize, variation: f64 },
    #[error("coherence ({i},{j}) starts at {magnitude:e}, too small to fit")]
    NoInitialCoherence { i: usize, j: usize, magnitude: f64 },
    #[error("invalid integrator parameters: {0}")]
    InvalidParams(String),
}

/// Scenario configuration errors. All of them map to exit status 2.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("schema error at `{path}`: {reason}")]
    Schema { path: String, reason: String },
    #[error("matrix `{name}` is not Hermitian (residual {residual:e})")]
    NonHermitianMatrix { name: String, residual: f64 },
    #[error("unresolved name `{name}` referenced at `{path}`")]
    UnresolvedName { name: String, path: String },
    #[error("bad override `{0}` (expected key=value)")]
    BadOverride(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Top-level error for orchestrated runs.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Lindblad(#[from] LindbladError),
    #[error("consistency check failed: {0}")]
    CheckFailed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status: 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
