//! Fixed-step fourth-order Runge-Kutta integration with runtime monitors.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::brackets::Scheme;
use super::hamiltonian::{HybridHamiltonian, NoiseModel};
use super::rhs::Generator;
use crate::error::{EvolutionError, StateError};
use crate::hybrid_state::{HybridDensity, MatrixField};
use crate::units::Units;

/// Abort when trace mass within this many cells of an edge exceeds
/// [`BOUNDARY_RATIO`] of the peak.
pub const BOUNDARY_CELLS: usize = 2;
pub const BOUNDARY_RATIO: f64 = 1e-10;
pub const TRACE_DRIFT_LIMIT: f64 = 1e-6;
pub const GROWTH_LIMIT: f64 = 10.0;
/// Advisory bound on `dt * max frequency`.
pub const ADVISORY_PHASE: f64 = 0.1;

/// Which checks run after every step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Monitors {
    pub trace: bool,
    pub positivity: bool,
    pub boundary: bool,
}

impl Default for Monitors {
    fn default() -> Self {
        Self { trace: true, positivity: true, boundary: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorParams {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub monitors: Monitors,
    #[serde(default)]
    pub scheme: Scheme,
}

fn default_record_every() -> usize {
    1
}

impl IntegratorParams {
    pub fn new(dt: f64, t_final: f64, record_every: usize) -> Result<Self, EvolutionError> {
        let p = Self { dt, t_final, record_every, monitors: Monitors::default(), scheme: Scheme::Central };
        p.validate()?;
        Ok(p)
    }

    pub fn with_scheme(self, scheme: Scheme) -> Self {
        Self { scheme, ..self }
    }

    pub fn validate(&self) -> Result<(), EvolutionError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(EvolutionError::InvalidParams(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(EvolutionError::InvalidParams(format!("t_final = {} must be positive", self.t_final)));
        }
        if self.record_every == 0 {
            return Err(EvolutionError::InvalidParams("record_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps; the step is shrunk so that they land on `t_final`.
    pub fn steps(&self) -> usize {
        ((self.t_final / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn effective_dt(&self) -> f64 {
        self.t_final / self.steps() as f64
    }

    /// Warning text when `dt` is large against the fastest quantum phase or
    /// the cell-crossing rate of the classical flow.
    pub fn advisory(&self, generator: &Generator) -> Option<String> {
        let w = generator.max_quantum_frequency().max(generator.max_transport_rate());
        let phase = self.effective_dt() * w;
        (phase > ADVISORY_PHASE).then(|| format!("dt * max frequency = {phase:.3} exceeds {ADVISORY_PHASE}"))
    }
}

/// Per-step diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonitorRecord {
    pub t: f64,
    pub trace_error: f64,
    pub min_spectrum: f64,
    pub boundary_mass: f64,
    pub step_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MonitorLog {
    pub records: Vec<MonitorRecord>,
}

impl MonitorLog {
    pub fn min_spectrum(&self) -> f64 {
        self.records.iter().map(|r| r.min_spectrum).fold(f64::INFINITY, f64::min)
    }

    pub fn max_trace_error(&self) -> f64 {
        self.records.iter().map(|r| r.trace_error).fold(0.0, f64::max)
    }

    pub fn max_boundary_mass(&self) -> f64 {
        self.records.iter().map(|r| r.boundary_mass).fold(0.0, f64::max)
    }

    /// First time at which `min_spectrum` drops below `level`.
    pub fn first_below(&self, level: f64) -> Option<f64> {
        self.records.iter().find(|r| r.min_spectrum < level).map(|r| r.t)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,trace_error,min_spectrum,boundary_mass,step_norm")?;
        for r in &self.records {
            writeln!(
                out,
                "{:.12e},{:.6e},{:.6e},{:.6e},{:.12e}",
                r.t, r.trace_error, r.min_spectrum, r.boundary_mass, r.step_norm
            )?;
        }
        Ok(())
    }
}

/// Recorded states and diagnostics of one run.
#[derive(Clone, Debug)]
pub struct Evolution {
    pub times: Vec<f64>,
    pub states: Vec<HybridDensity>,
    pub log: MonitorLog,
    /// Largest Hermiticity residual over the recorded states.
    pub max_hermiticity_residual: f64,
}

impl Evolution {
    pub fn last(&self) -> &HybridDensity {
        self.states.last().expect("at least the initial state is recorded")
    }

    /// Writes every recorded state into one CSV with a leading `t` column.
    pub fn write_states_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (i, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            s.write_csv(out, Some(*t), i == 0)?;
        }
        Ok(())
    }
}

/// Ratio of the largest trace magnitude near an edge to the peak.
pub fn boundary_ratio(rho: &MatrixField) -> f64 {
    let tr = rho.pointwise_trace();
    let grid = rho.grid();
    let peak = tr.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if peak == 0.0 {
        return 0.0;
    }
    let edge = tr
        .iter()
        .enumerate()
        .filter(|(k, _)| grid.near_boundary(*k, BOUNDARY_CELLS))
        .fold(0.0, |m: f64, (_, v)| m.max(v.abs()));
    edge / peak
}

/// Fails with [`EvolutionError::BoundaryLeak`] when the state touches the edge.
pub fn check_boundary(rho: &MatrixField, t: f64) -> Result<f64, EvolutionError> {
    let ratio = boundary_ratio(rho);
    if ratio > BOUNDARY_RATIO {
        return Err(EvolutionError::BoundaryLeak { t, ratio });
    }
    Ok(ratio)
}

/// One classical Runge-Kutta step, followed by the scheme's filter.
pub fn rk4_step(g: &Generator, rho: &MatrixField, dt: f64) -> Result<MatrixField, StateError> {
    let k1 = g.rhs(rho)?;
    let mut tmp = rho.clone();
    tmp.axpy(0.5 * dt, &k1);
    let k2 = g.rhs(&tmp)?;
    let mut tmp = rho.clone();
    tmp.axpy(0.5 * dt, &k2);
    let k3 = g.rhs(&tmp)?;
    let mut tmp = rho.clone();
    tmp.axpy(dt, &k3);
    let k4 = g.rhs(&tmp)?;
    let mut next = rho.clone();
    next.axpy(dt / 6.0, &k1);
    next.axpy(dt / 3.0, &k2);
    next.axpy(dt / 3.0, &k3);
    next.axpy(dt / 6.0, &k4);
    g.post_step(&mut next);
    Ok(next)
}

/// Tracks the monitored quantities against the initial state.
#[derive(Clone, Copy, Debug)]
pub struct MonitorState {
    monitors: Monitors,
    norm0: f64,
    size0: f64,
}

impl MonitorState {
    pub fn new(rho0: &MatrixField, monitors: Monitors) -> Result<Self, EvolutionError> {
        check_boundary(rho0, 0.0)?;
        Ok(Self { monitors, norm0: rho0.total_trace(), size0: rho0.l1_frobenius() })
    }

    /// Computes the diagnostics and raises the monitored failures.
    pub fn observe(&self, rho: &MatrixField, t: f64) -> Result<MonitorRecord, EvolutionError> {
        let trace_error = (rho.total_trace() - self.norm0).abs();
        let step_norm = rho.l1_frobenius() / self.size0;
        let min_spectrum = if self.monitors.positivity { rho.min_spectrum() } else { f64::NAN };
        let boundary_mass = if self.monitors.boundary { check_boundary(rho, t)? } else { boundary_ratio(rho) };
        if !step_norm.is_finite() || step_norm > GROWTH_LIMIT {
            return Err(EvolutionError::StepUnstable { t, growth: step_norm });
        }
        if self.monitors.trace && !(trace_error <= TRACE_DRIFT_LIMIT) {
            return Err(EvolutionError::TraceDrift { t, drift: trace_error });
        }
        Ok(MonitorRecord { t, trace_error, min_spectrum, boundary_mass, step_norm })
    }
}

/// Integrates with a prebuilt generator.
pub fn evolve_generator(
    g: &Generator,
    rho0: &HybridDensity,
    params: &IntegratorParams,
) -> Result<Evolution, EvolutionError> {
    params.validate()?;
    let monitor = MonitorState::new(rho0.field(), params.monitors)?;
    let steps = params.steps();
    let dt = params.effective_dt();
    let mut rho = rho0.field().clone();
    let mut log = MonitorLog { records: vec![monitor.observe(&rho, 0.0)?] };
    let mut times = vec![0.0];
    let mut states = vec![rho0.clone()];
    let mut herm = rho.hermiticity_residual();
    for step in 1..=steps {
        rho = rk4_step(g, &rho, dt)?;
        let t = step as f64 * dt;
        log.records.push(monitor.observe(&rho, t)?);
        if step % params.record_every == 0 || step == steps {
            herm = herm.max(rho.hermiticity_residual());
            times.push(t);
            states.push(HybridDensity::from_field_unchecked(rho.clone()));
        }
    }
    Ok(Evolution { times, states, log, max_hermiticity_residual: herm })
}

/// Integrates the hybrid master equation. Zero noise gives the bare
/// Aleksandrov flow.
pub fn evolve(
    h: &HybridHamiltonian,
    rho0: &HybridDensity,
    noise: &NoiseModel,
    units: &Units,
    params: &IntegratorParams,
) -> Result<Evolution, EvolutionError> {
    let g = Generator::master(h, noise, units, params.scheme)?;
    evolve_generator(&g, rho0, params)
}
