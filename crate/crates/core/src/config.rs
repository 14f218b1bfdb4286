//! Scenario documents: JSON parsing with key paths in errors, dotted
//! overrides, validation and construction of the run objects.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::ConfigError;
use crate::evolution::{Coupling, HybridHamiltonian, IntegratorParams, Monitors, NoiseModel, Scheme};
use crate::gravity_kernel::{coulomb_of_distance, point_mass_field, site_mass_field, Lattice3, MassDensityField};
use crate::hybrid_state::{product_state, Axis, ClassicalDensity, HybridDensity, PhaseGrid, QuantumDensity, ScalarField};
use crate::linalg::{hermiticity_residual, HermitianMatrix, MatrixSpec, C64};
use crate::reduced_lindblad::KernelPreset;
use crate::units::Units;

/// Top-level scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub units: Units,
    pub quantum: QuantumBlock,
    #[serde(default)]
    pub classical: ClassicalBlock,
    #[serde(default)]
    pub coupling: CouplingBlock,
    #[serde(default)]
    pub integrator: Option<IntegratorBlock>,
    pub run: RunBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumBlock {
    pub dim: usize,
    #[serde(default)]
    pub matrices: BTreeMap<String, MatrixSpec>,
    /// Name of `HQ`; zero when absent.
    #[serde(default)]
    pub hamiltonian: Option<String>,
    /// Name of the initial density matrix.
    pub initial: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalBlock {
    #[serde(default)]
    pub grid: Option<Vec<Axis>>,
    /// `HC` on the grid.
    #[serde(default)]
    pub hamiltonian: Option<FieldSpec>,
    #[serde(default)]
    pub initial: Option<GaussianSpec>,
    #[serde(default)]
    pub lattice: Option<Lattice3>,
    /// Mass content of each configuration branch on the lattice.
    #[serde(default)]
    pub masses: Vec<MassSpec>,
    /// Single-mode model for `limit-scan`.
    #[serde(default)]
    pub mode: Option<ModeSpec>,
}

/// `constant + sum_i linear[i] x_i + sum_i quadratic[i] x_i^2`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub linear: Vec<f64>,
    #[serde(default)]
    pub quadratic: Vec<f64>,
}

impl FieldSpec {
    pub fn sample(&self, grid: &PhaseGrid) -> ScalarField {
        grid.sample(|x| {
            let lin: f64 = self.linear.iter().zip(x).map(|(a, x)| a * x).sum();
            let quad: f64 = self.quadratic.iter().zip(x).map(|(a, x)| a * x * x).sum();
            self.constant + lin + quad
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Point mass carried by one branch, placed on a site or at a position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassSpec {
    pub branch: usize,
    pub mass: f64,
    #[serde(default)]
    pub site: Option<[usize; 3]>,
    #[serde(default)]
    pub center: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub kappa: f64,
    pub phi_width: f64,
    #[serde(default = "default_grid_sigmas")]
    pub grid_sigmas: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_records")]
    pub records_per_period: usize,
}

fn default_grid_sigmas() -> f64 {
    7.0
}

fn default_points() -> usize {
    64
}

fn default_records() -> usize {
    16
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingBlock {
    #[serde(default)]
    pub pairs: Vec<PairSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub kernel_preset: KernelPreset,
}

/// Quantum operator `op` times the classical field `field`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub op: String,
    #[serde(default)]
    pub field: FieldSpec,
    /// Spatial position, used by the `gravity` noise preset.
    #[serde(default)]
    pub position: Option<[f64; 3]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePreset {
    /// Use `dc` and `dq` as given.
    #[default]
    Explicit,
    /// `DQ = (hbar^2 / 4) DC^-1`.
    Saturated,
    /// `DC` from the smeared Coulomb kernel between pair positions, `DQ`
    /// saturated against it.
    Gravity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrMatrix {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub preset: NoisePreset,
    #[serde(default)]
    pub dc: Option<ScalarOrMatrix>,
    #[serde(default)]
    pub dq: Option<ScalarOrMatrix>,
    /// Smearing width for the `gravity` preset.
    #[serde(default)]
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorBlock {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub monitors: Monitors,
}

fn default_record_every() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Unravel,
    SimulateLindblad,
    Kernels,
    Rates,
    LimitScan,
    Check,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub mode: Mode,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub n_traj: Option<usize>,
    #[serde(default)]
    pub c_values: Vec<f64>,
}

/// Parses and validates a scenario document.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    parse_with_overrides(text, &[]).map(|(cfg, _)| cfg)
}

/// Parses, applies `key.path=value` overrides, validates, and returns the
/// config with its canonical hash.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<(ScenarioConfig, String), ConfigError> {
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| ConfigError::Schema { path: ".".into(), reason: e.to_string() })?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let cfg = from_value(value)?;
    cfg.validate()?;
    Ok((cfg.clone(), config_hash(&cfg)))
}

fn from_value(value: Value) -> Result<ScenarioConfig, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| ConfigError::Schema {
        path: e.path().to_string(),
        reason: e.inner().to_string(),
    })
}

/// Sets a dotted key; the value is read as JSON when it parses, else as a string.
pub fn apply_override(value: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::BadOverride(assignment.into()))?;
    if key.is_empty() {
        return Err(ConfigError::BadOverride(assignment.into()));
    }
    let new = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let mut cur = value;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert((*part).into(), new);
                    return Ok(());
                }
                map.entry(*part).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| ConfigError::BadOverride(assignment.into()))?;
                let slot = items.get_mut(idx).ok_or_else(|| ConfigError::BadOverride(assignment.into()))?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                slot
            }
            _ => return Err(ConfigError::BadOverride(assignment.into())),
        };
    }
    Ok(())
}

/// SHA-256 of the canonical JSON form; object keys are emitted sorted, so
/// the hash ignores key order in the source document.
pub fn config_hash(cfg: &ScenarioConfig) -> String {
    let value = serde_json::to_value(cfg).expect("configs serialize");
    let text = serde_json::to_string(&value).expect("values serialize");
    hex(&Sha256::digest(text.as_bytes()))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn schema(path: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Schema { path: path.into(), reason: reason.into() }
}

fn builtin(name: &str, d: usize) -> Option<HermitianMatrix> {
    match (name, d) {
        ("identity", _) => Some(HermitianMatrix::identity(d)),
        ("zero", _) => Some(HermitianMatrix::zeros(d)),
        ("sigma_x", 2) => Some(HermitianMatrix::pauli_x()),
        ("sigma_y", 2) => Some(HermitianMatrix::pauli_y()),
        ("sigma_z", 2) => Some(HermitianMatrix::pauli_z()),
        _ => None,
    }
}

fn to_matrix(m: &ScalarOrMatrix, path: &str, n: usize) -> Result<DMatrix<f64>, ConfigError> {
    let out = match m {
        ScalarOrMatrix::Scalar(v) => DMatrix::from_element(1, 1, *v),
        ScalarOrMatrix::Matrix(rows) => {
            if rows.iter().any(|r| r.len() != rows.len()) {
                return Err(schema(path, "noise matrix must be square"));
            }
            DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
        }
    };
    if out.nrows() != n {
        return Err(schema(path, format!("expected {n}x{n} for {n} coupling pairs")));
    }
    Ok(out)
}

impl ScenarioConfig {
    /// Resolves a matrix name: user matrices first, then `identity`, `zero`
    /// and, for qubits, `sigma_x|y|z`.
    pub fn matrix(&self, name: &str, path: &str) -> Result<HermitianMatrix, ConfigError> {
        let d = self.quantum.dim;
        if let Some(spec) = self.quantum.matrices.get(name) {
            let im = spec.im.clone().unwrap_or_else(|| vec![vec![0.0; d]; d]);
            let mpath = format!("quantum.matrices.{name}");
            if spec.re.len() != d || im.len() != d || spec.re.iter().chain(&im).any(|r| r.len() != d) {
                return Err(schema(&mpath, format!("expected {d}x{d} real and imaginary parts")));
            }
            let m = DMatrix::from_fn(d, d, |i, j| C64::new(spec.re[i][j], im[i][j]));
            return HermitianMatrix::new(m.clone()).map_err(|_| ConfigError::NonHermitianMatrix {
                name: name.into(),
                residual: hermiticity_residual(&m),
            });
        }
        builtin(name, d).ok_or_else(|| ConfigError::UnresolvedName { name: name.into(), path: path.into() })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.quantum.dim == 0 || self.quantum.dim > 8 {
            return Err(schema("quantum.dim", "dimension must be between 1 and 8"));
        }
        if !self.units.is_valid() {
            return Err(schema("units", "hbar, G and c must be positive"));
        }
        for name in self.quantum.matrices.keys() {
            self.matrix(name, "quantum.matrices")?;
        }
        self.hq()?;
        self.initial_quantum()?;
        for (i, p) in self.coupling.pairs.iter().enumerate() {
            self.matrix(&p.op, &format!("coupling.pairs[{i}].op"))?;
        }
        if let Some(it) = &self.integrator {
            IntegratorParams { dt: it.dt, t_final: it.t_final, record_every: it.record_every, monitors: it.monitors, scheme: it.scheme }
                .validate()
                .map_err(|e| schema("integrator", e.to_string()))?;
        }
        match self.run.mode {
            Mode::Simulate | Mode::Unravel => {
                self.grid()?;
                self.hamiltonian()?;
                self.initial_state()?;
                self.noise()?;
                self.integrator()?;
                if self.run.mode == Mode::Unravel && self.run.n_traj.unwrap_or(0) == 0 {
                    return Err(schema("run.n_traj", "unravel needs a positive trajectory count"));
                }
            }
            Mode::SimulateLindblad => {
                self.integrator()?;
                if self.classical.lattice.is_some() {
                    self.branches()?;
                } else {
                    self.noise()?;
                }
            }
            Mode::Kernels => {
                self.lattice()?;
            }
            Mode::Rates => {
                self.branches()?;
            }
            Mode::LimitScan => {
                self.mode_spec()?;
                self.integrator()?;
                if self.coupling.pairs.len() != 1 {
                    return Err(schema("coupling.pairs", "limit-scan needs exactly one coupling pair"));
                }
                self.noise()?;
                if self.run.c_values.len() < 2 || self.run.c_values.iter().any(|c| !(*c > 0.0)) {
                    return Err(schema("run.c_values", "need at least two positive values"));
                }
            }
            Mode::Check => {}
        }
        Ok(())
    }

    pub fn hq(&self) -> Result<HermitianMatrix, ConfigError> {
        match &self.quantum.hamiltonian {
            Some(name) => self.matrix(name, "quantum.hamiltonian"),
            None => Ok(HermitianMatrix::zeros(self.quantum.dim)),
        }
    }

    pub fn initial_quantum(&self) -> Result<QuantumDensity, ConfigError> {
        let m = self.matrix(&self.quantum.initial, "quantum.initial")?;
        QuantumDensity::new(m).map_err(|e| schema("quantum.initial", e.to_string()))
    }

    pub fn grid(&self) -> Result<PhaseGrid, ConfigError> {
        let axes = self.classical.grid.clone().ok_or_else(|| schema("classical.grid", "missing"))?;
        PhaseGrid::from_axes(axes).map_err(|e| schema("classical.grid", e.to_string()))
    }

    pub fn hamiltonian(&self) -> Result<HybridHamiltonian, ConfigError> {
        let grid = self.grid()?;
        let n = grid.axes().len();
        let hc = self.classical.hamiltonian.clone().unwrap_or_default();
        check_field(&hc, n, "classical.hamiltonian")?;
        let mut couplings = Vec::new();
        for (i, p) in self.coupling.pairs.iter().enumerate() {
            let path = format!("coupling.pairs[{i}]");
            check_field(&p.field, n, &format!("{path}.field"))?;
            couplings.push(Coupling { op: self.matrix(&p.op, &format!("{path}.op"))?, field: p.field.sample(&grid) });
        }
        HybridHamiltonian::new(self.hq()?, hc.sample(&grid), couplings).map_err(|e| schema("coupling", e.to_string()))
    }

    pub fn initial_state(&self) -> Result<HybridDensity, ConfigError> {
        let grid = self.grid()?;
        let g = self.classical.initial.as_ref().ok_or_else(|| schema("classical.initial", "missing"))?;
        let rc = ClassicalDensity::gaussian(&grid, &g.mean, &g.std).map_err(|e| schema("classical.initial", e.to_string()))?;
        product_state(&self.initial_quantum()?, &rc).map_err(|e| schema("classical.initial", e.to_string()))
    }

    pub fn noise(&self) -> Result<NoiseModel, ConfigError> {
        let n = self.coupling.pairs.len();
        let spec = &self.coupling.noise;
        let hbar2 = self.units.hbar * self.units.hbar;
        let zero = || DMatrix::zeros(n, n);
        let dc = match spec.preset {
            NoisePreset::Gravity => {
                let sigma = spec
                    .sigma
                    .or(self.classical.lattice.map(|l| l.sigma))
                    .ok_or_else(|| schema("coupling.noise.sigma", "gravity preset needs a smearing width"))?;
                let pos: Vec<[f64; 3]> = self
                    .coupling
                    .pairs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| p.position.ok_or_else(|| schema(&format!("coupling.pairs[{i}].position"), "missing")))
                    .collect::<Result<_, _>>()?;
                let coeff = 0.5 * self.units.g * self.units.hbar;
                DMatrix::from_fn(n, n, |i, j| {
                    let d = (0..3).map(|k| (pos[i][k] - pos[j][k]).powi(2)).sum::<f64>().sqrt();
                    coeff * coulomb_of_distance(d, sigma)
                })
            }
            NoisePreset::Saturated => match &spec.dc {
                Some(m) => to_matrix(m, "coupling.noise.dc", n)?,
                None => DMatrix::identity(n, n) * (0.5 * self.units.hbar),
            },
            NoisePreset::Explicit => match &spec.dc {
                Some(m) => to_matrix(m, "coupling.noise.dc", n)?,
                None => zero(),
            },
        };
        let dq = match spec.preset {
            NoisePreset::Explicit => match &spec.dq {
                Some(m) => to_matrix(m, "coupling.noise.dq", n)?,
                None => zero(),
            },
            _ => {
                if spec.dq.is_some() {
                    return Err(schema("coupling.noise.dq", "dq is derived by the preset"));
                }
                dc.clone()
                    .try_inverse()
                    .ok_or_else(|| schema("coupling.noise.dc", "saturation needs an invertible dc"))?
                    * (0.25 * hbar2)
            }
        };
        let dq = (&dq + dq.transpose()) * 0.5;
        NoiseModel::new(dc, dq).map_err(|e| schema("coupling.noise", e.to_string()))
    }

    pub fn integrator(&self) -> Result<IntegratorParams, ConfigError> {
        let it = self.integrator.as_ref().ok_or_else(|| schema("integrator", "missing"))?;
        Ok(IntegratorParams {
            dt: it.dt,
            t_final: it.t_final,
            record_every: it.record_every,
            monitors: it.monitors,
            scheme: it.scheme,
        })
    }

    pub fn lattice(&self) -> Result<Lattice3, ConfigError> {
        let l = self.classical.lattice.ok_or_else(|| schema("classical.lattice", "missing"))?;
        l.validate().map_err(|e| schema("classical.lattice", e.to_string()))?;
        Ok(l)
    }

    /// Mass field of every quantum basis state, in branch order.
    pub fn branches(&self) -> Result<Vec<MassDensityField>, ConfigError> {
        let lattice = self.lattice()?;
        let mut out = vec![MassDensityField::zeros(&lattice); self.quantum.dim];
        if self.classical.masses.is_empty() {
            return Err(schema("classical.masses", "at least one mass is needed"));
        }
        for (i, m) in self.classical.masses.iter().enumerate() {
            let path = format!("classical.masses[{i}]");
            if m.branch >= self.quantum.dim {
                return Err(schema(&format!("{path}.branch"), "branch index exceeds the quantum dimension"));
            }
            let field = match (m.site, m.center) {
                (Some(site), None) => site_mass_field(m.mass, site, &lattice),
                (None, Some(center)) => point_mass_field(m.mass, center, &lattice),
                _ => return Err(schema(&path, "give exactly one of `site` and `center`")),
            }
            .map_err(|e| schema(&path, e.to_string()))?;
            out[m.branch] = out[m.branch].add(&field).map_err(|e| schema(&path, e.to_string()))?;
        }
        Ok(out)
    }

    pub fn mode_spec(&self) -> Result<ModeSpec, ConfigError> {
        let m = self.classical.mode.clone().ok_or_else(|| schema("classical.mode", "missing"))?;
        if !(m.kappa > 0.0 && m.phi_width > 0.0 && m.grid_sigmas > 0.0) || m.points < 8 {
            return Err(schema("classical.mode", "kappa, phi_width and grid_sigmas must be positive, points >= 8"));
        }
        Ok(m)
    }
}

fn check_field(f: &FieldSpec, n: usize, path: &str) -> Result<(), ConfigError> {
    if f.linear.len() > n || f.quadratic.len() > n {
        return Err(schema(path, format!("more coefficients than the {n} grid axes")));
    }
    Ok(())
}
