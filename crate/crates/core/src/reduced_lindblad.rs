//! Closed quantum master equations with a Newtonian pair potential and a
//! kernel-weighted double-commutator dissipator, plus coherence-decay fits.
//!
//! `drho/dt = -(i/hbar)[HQ + HG, rho] - (1/2 hbar^2) sum_rs DC(r,s) [f(r), [f(s), rho]]`.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::LindbladError;
use crate::gravity_kernel::{
    build_dc, decoherence_rate_from_kernel, newton_pair_potential, penrose_rate, KernelMatrix, Lattice3,
    MassOperatorField,
};
use crate::hybrid_state::QuantumDensity;
use crate::linalg::{
    block_commutator_acc, block_to_matrix, hermiticity_residual, matrix_to_block, DoubleCommutator,
    HermitianMatrix, C64,
};
use crate::units::Units;

/// Normalization drift and negativity tolerated along a trajectory.
pub const TRACE_TOL: f64 = 1e-6;
pub const PSD_TOL: f64 = 1e-8;
pub const GROWTH_LIMIT: f64 = 10.0;
/// Coherences smaller than this at `t = 0` cannot be fitted.
pub const MIN_COHERENCE: f64 = 1e-6;
/// Smallest relative variation of a coherence that counts as decay.
pub const MIN_VARIATION: f64 = 1e-3;

/// Normalization convention of the decoherence kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelPreset {
    /// `DC = (G hbar / 2) K`.
    #[default]
    DerivedHalf,
    /// `DC = G hbar K`, twice the derived kernel.
    Dio87,
}

impl KernelPreset {
    /// Multiplier applied to the derived kernel.
    pub fn factor(self) -> f64 {
        match self {
            KernelPreset::DerivedHalf => 1.0,
            KernelPreset::Dio87 => 2.0,
        }
    }
}

/// Reduced quantum dynamics.
#[derive(Clone, Debug)]
pub struct LindbladModel {
    hq: HermitianMatrix,
    hg: HermitianMatrix,
    ops: Vec<HermitianMatrix>,
    kernel: DMatrix<f64>,
    preset: KernelPreset,
    hbar: f64,
    dissipator: DoubleCommutator,
}

impl LindbladModel {
    /// `kernel[(r, s)]` couples `ops[r]` and `ops[s]` and must already carry
    /// any quadrature weights; the preset factor is applied on top.
    pub fn new(
        hq: HermitianMatrix,
        hg: HermitianMatrix,
        ops: Vec<HermitianMatrix>,
        kernel: DMatrix<f64>,
        units: &Units,
        preset: KernelPreset,
    ) -> Result<Self, LindbladError> {
        let d = hq.dim();
        if hg.dim() != d || ops.iter().any(|o| o.dim() != d) {
            return Err(LindbladError::ShapeMismatch("operator dimensions differ".into()));
        }
        if kernel.nrows() != ops.len() || kernel.ncols() != ops.len() {
            return Err(LindbladError::ShapeMismatch(format!(
                "{}x{} kernel for {} operators",
                kernel.nrows(),
                kernel.ncols(),
                ops.len()
            )));
        }
        let asym = (&kernel - kernel.transpose()).abs().max();
        if asym > 1e-12 * kernel.abs().max().max(1.0) {
            return Err(LindbladError::InvalidParams(format!("kernel is not symmetric ({asym:e})")));
        }
        if !units.is_valid() {
            return Err(LindbladError::InvalidParams("units must be positive".into()));
        }
        let blocks: Vec<Vec<C64>> = ops.iter().map(HermitianMatrix::to_block).collect();
        let weight = -0.5 * preset.factor() / (units.hbar * units.hbar);
        let dissipator = DoubleCommutator::new(&blocks, |r, s| kernel[(r, s)], d).scaled(weight);
        Ok(Self { hq, hg, ops, kernel, preset, hbar: units.hbar, dissipator })
    }

    /// Single coupling operator with a scalar kernel.
    pub fn scalar(
        hq: HermitianMatrix,
        hg: HermitianMatrix,
        op: HermitianMatrix,
        dc: f64,
        units: &Units,
    ) -> Result<Self, LindbladError> {
        Self::new(hq, hg, vec![op], DMatrix::from_element(1, 1, dc), units, KernelPreset::DerivedHalf)
    }

    pub fn dim(&self) -> usize {
        self.hq.dim()
    }

    pub fn hq(&self) -> &HermitianMatrix {
        &self.hq
    }

    pub fn hg(&self) -> &HermitianMatrix {
        &self.hg
    }

    pub fn ops(&self) -> &[HermitianMatrix] {
        &self.ops
    }

    /// Kernel before the preset factor.
    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn preset(&self) -> KernelPreset {
        self.preset
    }

    /// `HQ + HG`.
    pub fn hamiltonian(&self) -> HermitianMatrix {
        self.hq.add(&self.hg)
    }

    /// Same model with `HQ` replaced.
    pub fn with_hq(&self, hq: HermitianMatrix) -> Result<Self, LindbladError> {
        if hq.dim() != self.dim() {
            return Err(LindbladError::ShapeMismatch("HQ dimension differs".into()));
        }
        Ok(Self { hq, ..self.clone() })
    }
}

/// Lattice model: `HG` is the Newtonian pair potential of `fhat`, the
/// dissipator uses the smeared Coulomb kernel scaled by the preset.
pub fn build_model_from_lattice(
    hq: HermitianMatrix,
    fhat: &MassOperatorField,
    lattice: &Lattice3,
    units: &Units,
    preset: KernelPreset,
) -> Result<LindbladModel, LindbladError> {
    let dc = build_dc(lattice, units)?;
    build_model_with_kernel(hq, fhat, &dc, units, preset)
}

/// As [`build_model_from_lattice`] with a prebuilt derived `DC`.
pub fn build_model_with_kernel(
    hq: HermitianMatrix,
    fhat: &MassOperatorField,
    dc: &KernelMatrix,
    units: &Units,
    preset: KernelPreset,
) -> Result<LindbladModel, LindbladError> {
    let lattice = fhat.lattice();
    dc.lattice.same_as(lattice)?;
    let hg = newton_pair_potential(fhat, lattice, units)?;
    let d = fhat.dim();
    let ops: Vec<HermitianMatrix> = fhat.blocks().iter().map(|b| HermitianMatrix::from_block(b, d)).collect();
    let kernel = &dc.matrix * lattice.cell_volume().powi(2);
    LindbladModel::new(hq, hg, ops, kernel, units, preset)
}

/// Right-hand side of the reduced master equation.
pub fn lindblad_rhs(model: &LindbladModel, rho: &DMatrix<C64>) -> Result<DMatrix<C64>, LindbladError> {
    let d = model.dim();
    if rho.nrows() != d || rho.ncols() != d {
        return Err(LindbladError::ShapeMismatch(format!("{}x{} state for dimension {d}", rho.nrows(), rho.ncols())));
    }
    Ok(block_to_matrix(&rhs_block(model, &matrix_to_block(rho)), d))
}

fn rhs_block(model: &LindbladModel, x: &[C64]) -> Vec<C64> {
    let d = model.dim();
    let mut out = vec![C64::new(0.0, 0.0); d * d];
    let h = model.hamiltonian().to_block();
    block_commutator_acc(&h, x, C64::new(0.0, -1.0 / model.hbar), &mut out, d);
    model.dissipator.apply_acc(x, 1.0, &mut out);
    out
}

/// Fixed-step RK4 settings; the step shrinks so that steps land on `t_final`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LindbladParams {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

impl LindbladParams {
    pub fn new(dt: f64, t_final: f64, record_every: usize) -> Result<Self, LindbladError> {
        let p = Self { dt, t_final, record_every };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), LindbladError> {
        if !(self.dt > 0.0 && self.dt.is_finite() && self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(LindbladError::InvalidParams(format!("dt = {}, t_final = {}", self.dt, self.t_final)));
        }
        if self.record_every == 0 {
            return Err(LindbladError::InvalidParams("record_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.t_final / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn effective_dt(&self) -> f64 {
        self.t_final / self.steps() as f64
    }
}

/// Recorded quantum states.
#[derive(Clone, Debug)]
pub struct QuantumTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<QuantumDensity>,
    pub max_trace_error: f64,
    pub min_eigenvalue: f64,
    pub max_hermiticity_residual: f64,
}

impl QuantumTrajectory {
    /// Wraps externally produced states; diagnostics are computed here.
    pub fn new(times: Vec<f64>, states: Vec<QuantumDensity>) -> Result<Self, LindbladError> {
        if times.len() != states.len() || times.is_empty() {
            return Err(LindbladError::ShapeMismatch(format!("{} times, {} states", times.len(), states.len())));
        }
        let mut traj = Self { times, states, max_trace_error: 0.0, min_eigenvalue: f64::INFINITY, max_hermiticity_residual: 0.0 };
        for s in &traj.states {
            traj.max_trace_error = traj.max_trace_error.max((s.matrix().trace() - 1.0).abs());
            traj.min_eigenvalue = traj.min_eigenvalue.min(s.matrix().min_eigenvalue());
            traj.max_hermiticity_residual =
                traj.max_hermiticity_residual.max(hermiticity_residual(s.matrix().matrix()));
        }
        Ok(traj)
    }

    pub fn last(&self) -> &QuantumDensity {
        self.states.last().expect("trajectories are never empty")
    }

    pub fn coherence(&self, i: usize, j: usize) -> Vec<C64> {
        self.states.iter().map(|s| s.matrix().matrix()[(i, j)]).collect()
    }

    pub fn population(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.matrix().matrix()[(i, i)].re).collect()
    }

    pub fn purity(&self) -> Vec<f64> {
        self.states.iter().map(QuantumDensity::purity).collect()
    }

    /// Columns `t`, then `re_ij,im_ij` for every entry in row-major order.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let d = self.states[0].dim();
        write!(out, "t")?;
        for i in 0..d {
            for j in 0..d {
                write!(out, ",re_{i}{j},im_{i}{j}")?;
            }
        }
        writeln!(out)?;
        for (t, s) in self.times.iter().zip(&self.states) {
            write!(out, "{t:.12e}")?;
            let m = s.matrix().matrix();
            for i in 0..d {
                for j in 0..d {
                    write!(out, ",{:.15e},{:.15e}", m[(i, j)].re, m[(i, j)].im)?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn rk4(model: &LindbladModel, x: &[C64], dt: f64) -> Vec<C64> {
    let stage = |base: &[C64], k: &[C64], h: f64| -> Vec<C64> { base.iter().zip(k).map(|(a, b)| a + b * h).collect() };
    let k1 = rhs_block(model, x);
    let k2 = rhs_block(model, &stage(x, &k1, 0.5 * dt));
    let k3 = rhs_block(model, &stage(x, &k2, 0.5 * dt));
    let k4 = rhs_block(model, &stage(x, &k3, dt));
    (0..x.len()).map(|i| x[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0)).collect()
}

/// RK4 integration with trace, positivity and growth monitors.
pub fn evolve_lindblad(
    model: &LindbladModel,
    rho0: &QuantumDensity,
    params: &LindbladParams,
) -> Result<QuantumTrajectory, LindbladError> {
    params.validate()?;
    let d = model.dim();
    if rho0.dim() != d {
        return Err(LindbladError::ShapeMismatch(format!("state dimension {} for model dimension {d}", rho0.dim())));
    }
    let steps = params.steps();
    let dt = params.effective_dt();
    let norm0 = rho0.matrix().matrix().norm();
    let trace0 = rho0.matrix().trace();
    let mut x = rho0.matrix().to_block();
    let mut times = vec![0.0];
    let mut states = vec![rho0.clone()];
    let mut herm = 0.0f64;
    for step in 1..=steps {
        x = rk4(model, &x, dt);
        let t = step as f64 * dt;
        let m = block_to_matrix(&x, d);
        let growth = m.norm() / norm0;
        if !growth.is_finite() || growth > GROWTH_LIMIT {
            return Err(LindbladError::StepUnstable { t, growth });
        }
        let drift = (m.trace().re - trace0).abs();
        if !(drift <= TRACE_TOL) {
            return Err(LindbladError::TraceDrift { t, drift });
        }
        if step % params.record_every == 0 || step == steps {
            herm = herm.max(hermiticity_residual(&m));
            let h = HermitianMatrix::hermitize(&m);
            let min_eigenvalue = h.min_eigenvalue();
            if min_eigenvalue < -PSD_TOL {
                return Err(crate::error::StateError::NotPositive { min_eigenvalue }.into());
            }
            times.push(t);
            states.push(QuantumDensity::from_matrix_unchecked(h));
        }
    }
    let mut traj = QuantumTrajectory::new(times, states)?;
    traj.max_hermiticity_residual = traj.max_hermiticity_residual.max(herm);
    Ok(traj)
}

/// Least-squares slope of `-log |rho_ij(t)|` over the recorded window.
pub fn offdiagonal_decay_rate(traj: &QuantumTrajectory, i: usize, j: usize) -> Result<f64, LindbladError> {
    let d = traj.states[0].dim();
    if i >= d || j >= d || i == j {
        return Err(LindbladError::ShapeMismatch(format!("entry ({i},{j}) is not off-diagonal in dimension {d}")));
    }
    let mags: Vec<f64> = traj.coherence(i, j).iter().map(|z| z.norm()).collect();
    if !(mags[0] > MIN_COHERENCE) {
        return Err(LindbladError::NoInitialCoherence { i, j, magnitude: mags[0] });
    }
    let hi = mags.iter().cloned().fold(0.0, f64::max);
    let lo = mags.iter().cloned().fold(f64::INFINITY, f64::min);
    let variation = (hi - lo) / hi;
    if variation < MIN_VARIATION {
        return Err(LindbladError::InsufficientDecay { i, j, variation });
    }
    let pts: Vec<(f64, f64)> =
        traj.times.iter().zip(&mags).filter(|(_, m)| **m > 0.0).map(|(t, m)| (*t, -m.ln())).collect();
    let n = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + (t - mt) * (y - my), b + (t - mt) * (t - mt)));
    Ok(sxy / sxx)
}

/// Fitted decay of one coherence against the kernel and closed-form rates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateReport {
    pub pair: [usize; 2],
    pub preset: KernelPreset,
    pub fitted_rate: f64,
    /// Rate predicted by the model's own kernel, preset factor included.
    pub kernel_rate: f64,
    pub penrose_rate: f64,
    /// `fitted_rate / kernel_rate`.
    pub ratio: f64,
}

/// Fits every requested branch pair of a configuration-diagonal lattice run.
pub fn rate_report(
    traj: &QuantumTrajectory,
    fhat: &MassOperatorField,
    dc: &KernelMatrix,
    units: &Units,
    preset: KernelPreset,
    pair: [usize; 2],
) -> Result<RateReport, LindbladError> {
    let branches = fhat
        .branches()
        .ok_or_else(|| LindbladError::InvalidParams("rate reports need a configuration-diagonal f".into()))?;
    let [i, j] = pair;
    if i >= branches.len() || j >= branches.len() {
        return Err(LindbladError::ShapeMismatch(format!("pair ({i},{j}) out of range")));
    }
    let fitted_rate = offdiagonal_decay_rate(traj, i, j)?;
    let kernel_rate = preset.factor() * decoherence_rate_from_kernel(&branches[i], &branches[j], dc, units)?;
    let penrose = penrose_rate(&branches[i], &branches[j], fhat.lattice(), units)?;
    Ok(RateReport { pair, preset, fitted_rate, kernel_rate, penrose_rate: penrose, ratio: fitted_rate / kernel_rate })
}
