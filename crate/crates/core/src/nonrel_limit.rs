//! One classical field mode coupled to a quantum system, as a desk-scale
//! model of the nonrelativistic limit of hybrid gravity.
//!
//! Phase-space axes are `(phi, xi)` with `HC = 2 pi G c^2 xi^2 + kappa phi^2 / 2`
//! and coupling `f phi`. As `c` grows the mode stiffens and the reduced
//! quantum dynamics approaches a master equation with `HG = -f^2 / (2 kappa)`.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, EvolutionError, StateError};
use crate::evolution::{evolve, Coupling, Evolution, HybridHamiltonian, IntegratorParams, Monitors, NoiseModel, Scheme};
use crate::hybrid_state::{quantum_marginal, Axis, ClassicalDensity, HybridDensity, PhaseGrid, QuantumDensity, ScalarField};
use crate::linalg::{c, trace_distance, HermitianMatrix, C64};
use crate::reduced_lindblad::{evolve_lindblad, LindbladModel, LindbladParams};
use crate::units::Units;

const PHI: usize = 0;
const XI: usize = 1;

/// Single-mode hybrid model.
#[derive(Clone, Debug)]
pub struct ModeModel {
    pub kappa: f64,
    pub c: f64,
    pub fhat: HermitianMatrix,
    pub hq: HermitianMatrix,
    pub grid: PhaseGrid,
    pub noise: NoiseModel,
    pub units: Units,
}

impl ModeModel {
    /// Coefficient of `xi^2` in `HC`.
    pub fn xi_coefficient(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.units.g * self.c * self.c
    }

    /// Angular frequency of the free mode, `sqrt(4 pi G c^2 kappa)`.
    pub fn frequency(&self) -> f64 {
        (2.0 * self.xi_coefficient() * self.kappa).sqrt()
    }

    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.frequency()
    }

    /// Largest shifted equilibrium `|phi*| = |f| / kappa`.
    pub fn equilibrium_shift(&self) -> f64 {
        self.fhat.op_norm() / self.kappa
    }

    pub fn hamiltonian(&self) -> Result<HybridHamiltonian, StateError> {
        mode_hamiltonian(self.kappa, self.xi_coefficient(), &self.fhat, &self.hq, &self.grid)
    }

    /// Reduced master equation with `HG = -f^2 / (2 kappa)` and the same
    /// scalar decoherence coefficient.
    pub fn analog_lindblad(&self) -> Result<LindbladModel, Error> {
        let f2 = HermitianMatrix::hermitize(&(self.fhat.matrix() * self.fhat.matrix()));
        let hg = f2.scaled(-0.5 / self.kappa);
        let dc = self.noise.dc()[(0, 0)];
        Ok(LindbladModel::scalar(self.hq.clone(), hg, self.fhat.clone(), dc, &self.units)?)
    }

    /// `rho(x) = D(x) R D(x)` with `D(x) = sum_b sqrt(g_b(x)) P_b` over the
    /// eigenprojectors `P_b` of `f`, each `g_b` a Gaussian at the branch
    /// equilibrium `(-lambda_b / kappa, 0)`.
    pub fn branch_equilibrated_state(
        &self,
        rho_q: &QuantumDensity,
        phi_width: f64,
        xi_width: f64,
    ) -> Result<HybridDensity, StateError> {
        let d = self.fhat.dim();
        if rho_q.dim() != d {
            return Err(StateError::ShapeMismatch("quantum state and f differ in dimension".into()));
        }
        let eig = self.fhat.matrix().clone().symmetric_eigen();
        let branches: Vec<ClassicalDensity> = eig
            .eigenvalues
            .iter()
            .map(|&l| ClassicalDensity::gaussian(&self.grid, &[-l / self.kappa, 0.0], &[phi_width, xi_width]))
            .collect::<Result<_, _>>()?;
        let v = &eig.eigenvectors;
        let r = v.adjoint() * rho_q.matrix().matrix() * v;
        let mut field = crate::hybrid_state::MatrixField::zeros(&self.grid, d);
        for k in 0..self.grid.len() {
            let s: Vec<f64> = branches.iter().map(|g| g.values()[k].max(0.0).sqrt()).collect();
            let local = DMatrix::from_fn(d, d, |i, j| r[(i, j)] * (s[i] * s[j]));
            let m = v * local * v.adjoint();
            let b = field.block_mut(k);
            for i in 0..d {
                for j in 0..d {
                    b[i * d + j] = m[(i, j)];
                }
            }
        }
        HybridDensity::new(field)
    }
}

fn mode_hamiltonian(
    kappa: f64,
    xi_coefficient: f64,
    fhat: &HermitianMatrix,
    hq: &HermitianMatrix,
    grid: &PhaseGrid,
) -> Result<HybridHamiltonian, StateError> {
    let hc = grid.sample(|x| xi_coefficient * x[XI] * x[XI] + 0.5 * kappa * x[PHI] * x[PHI]);
    HybridHamiltonian::new(
        hq.clone(),
        hc,
        vec![Coupling { op: fhat.clone(), field: ScalarField::coordinate(grid, PHI) }],
    )
}

/// Builds the model and its hybrid Hamiltonian. Fails with
/// [`EvolutionError::BoundaryLeak`] when the shifted equilibria do not lie
/// well inside the `phi` axis.
pub fn build_mode_model(
    kappa: f64,
    c: f64,
    fhat: HermitianMatrix,
    hq: HermitianMatrix,
    units: Units,
    noise: NoiseModel,
    grid: PhaseGrid,
) -> Result<(ModeModel, HybridHamiltonian), EvolutionError> {
    if !(kappa > 0.0 && kappa.is_finite() && c > 0.0 && c.is_finite()) {
        return Err(EvolutionError::InvalidParams(format!("kappa = {kappa} and c = {c} must be positive")));
    }
    if grid.dofs() != 1 {
        return Err(EvolutionError::InvalidParams("the mode model needs a (phi, xi) grid".into()));
    }
    if noise.len() != 1 {
        return Err(EvolutionError::InvalidParams("the mode model has a single coupling".into()));
    }
    let model = ModeModel { kappa, c, fhat, hq, grid, noise, units };
    let axis = model.grid.axes()[PHI];
    let margin = 4.0 * axis.spacing();
    let shift = model.equilibrium_shift();
    if shift + margin > axis.max.min(-axis.min) {
        return Err(EvolutionError::BoundaryLeak { t: 0.0, ratio: 1.0 });
    }
    let h = model.hamiltonian()?;
    Ok((model, h))
}

/// `int x rho dx` along `axis`, a Hermitian matrix.
pub fn partial_moment(rho: &HybridDensity, axis: usize) -> HermitianMatrix {
    let grid = rho.grid();
    let w: Vec<f64> = (0..grid.len()).map(|k| grid.point(k)[axis]).collect();
    HermitianMatrix::hermitize(&rho.field().weighted_integral(&w))
}

fn sym_product(f: &HermitianMatrix, rho_q: &QuantumDensity) -> DMatrix<C64> {
    let (f, r) = (f.matrix(), rho_q.matrix().matrix());
    (f * r + r * f) * c(0.5)
}

/// `|kappa <phi> + <f>|`.
pub fn mean_field_residual(rho: &HybridDensity, model: &ModeModel) -> f64 {
    let phi = partial_moment(rho, PHI).trace();
    let rq = quantum_marginal(rho);
    let f = (model.fhat.matrix() * rq.matrix().matrix()).trace().re;
    (model.kappa * phi + f).abs()
}

/// Operator norm of `kappa M_phi + (f rho_Q + rho_Q f) / 2`.
pub fn post_mean_field_residual(rho: &HybridDensity, model: &ModeModel) -> f64 {
    let m = partial_moment(rho, PHI);
    let rq = quantum_marginal(rho);
    HermitianMatrix::hermitize(&(m.matrix() * c(model.kappa) + sym_product(&model.fhat, &rq))).op_norm()
}

/// Operator norm of `M_xi`.
pub fn xi_moment_norm(rho: &HybridDensity) -> f64 {
    partial_moment(rho, XI).op_norm()
}

/// Moment time series of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MomentReport {
    pub times: Vec<f64>,
    pub phi_mean: Vec<f64>,
    pub xi_mean: Vec<f64>,
    pub f_mean: Vec<f64>,
    #[serde(skip)]
    pub m_phi: Vec<HermitianMatrix>,
    #[serde(skip)]
    pub m_xi: Vec<HermitianMatrix>,
    pub mean_field: Vec<f64>,
    pub post_mean_field: Vec<f64>,
    pub xi_norm: Vec<f64>,
}

pub fn moment_report(ev: &Evolution, model: &ModeModel) -> MomentReport {
    let mut r = MomentReport { times: ev.times.clone(), ..Default::default() };
    for s in &ev.states {
        let mp = partial_moment(s, PHI);
        let mx = partial_moment(s, XI);
        let rq = quantum_marginal(s);
        let f = (model.fhat.matrix() * rq.matrix().matrix()).trace().re;
        r.phi_mean.push(mp.trace());
        r.xi_mean.push(mx.trace());
        r.f_mean.push(f);
        r.mean_field.push((model.kappa * mp.trace() + f).abs());
        r.post_mean_field
            .push(HermitianMatrix::hermitize(&(mp.matrix() * c(model.kappa) + sym_product(&model.fhat, &rq))).op_norm());
        r.xi_norm.push(mx.op_norm());
        r.m_phi.push(mp);
        r.m_xi.push(mx);
    }
    r
}

/// Largest residuals of the two mean-value relations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EhrenfestResidual {
    /// `max |d<phi>/dt - 4 pi G c^2 <xi>|`.
    pub phi: f64,
    /// `max |d<xi>/dt + kappa <phi> + <f>|`.
    pub xi: f64,
}

impl EhrenfestResidual {
    pub fn max(&self) -> f64 {
        self.phi.max(self.xi)
    }
}

/// Central differences over interior records; needs uniformly spaced times.
pub fn ehrenfest_check(report: &MomentReport, model: &ModeModel) -> EhrenfestResidual {
    let t = &report.times;
    let mut res = EhrenfestResidual { phi: 0.0, xi: 0.0 };
    for k in 1..t.len().saturating_sub(1) {
        let h = t[k + 1] - t[k - 1];
        let dphi = (report.phi_mean[k + 1] - report.phi_mean[k - 1]) / h;
        let dxi = (report.xi_mean[k + 1] - report.xi_mean[k - 1]) / h;
        res.phi = res.phi.max((dphi - 2.0 * model.xi_coefficient() * report.xi_mean[k]).abs());
        res.xi = res.xi.max((dxi + model.kappa * report.phi_mean[k] + report.f_mean[k]).abs());
    }
    res
}

/// Scan inputs shared by every value of `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanTemplate {
    pub kappa: f64,
    pub fhat: HermitianMatrix,
    pub hq: HermitianMatrix,
    pub rho_q: HermitianMatrix,
    pub units: Units,
    pub dc: f64,
    pub dq: f64,
    /// Initial `phi` width of every branch; the `xi` width follows from
    /// equipartition, `phi_width * sqrt(kappa / (4 pi G c^2))`.
    pub phi_width: f64,
    /// Grid half-widths in standard deviations of the heated state.
    pub grid_sigmas: f64,
    pub points: usize,
    /// Step at `c = c_ref`; smaller by `c_ref / c` above it.
    pub dt_ref: f64,
    pub c_ref: f64,
    pub t_final: f64,
    /// Records per classical period.
    pub records_per_period: usize,
    pub scheme: Scheme,
}

/// One scan entry.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanPoint {
    pub c: f64,
    pub dt: f64,
    pub phi_half_width: f64,
    pub xi_half_width: f64,
    pub trace_distance: f64,
    pub mean_field_residual: f64,
    pub post_mean_field_residual: f64,
    /// Mean of `xi_moment_norm` over the last classical period.
    pub xi_norm_avg: f64,
    pub ehrenfest: EhrenfestResidual,
    pub min_spectrum: f64,
    pub max_trace_error: f64,
    #[serde(skip)]
    pub series: ScanSeries,
}

/// Recorded time series of one entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScanSeries {
    pub moments: MomentReport,
    pub trace_distance: Vec<f64>,
}

impl ScanSeries {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,phi_mean,xi_mean,f_mean,mean_field,post_mean_field,xi_norm,trace_distance")?;
        let m = &self.moments;
        for k in 0..m.times.len() {
            writeln!(
                out,
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                m.times[k],
                m.phi_mean[k],
                m.xi_mean[k],
                m.f_mean[k],
                m.mean_field[k],
                m.post_mean_field[k],
                m.xi_norm[k],
                self.trace_distance[k]
            )?;
        }
        Ok(())
    }
}

/// Summary statistics over the scan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanReport {
    pub points: Vec<ScanPoint>,
    /// Least-squares slope of `-log xi_norm_avg` against `log c`.
    pub xi_exponent: f64,
    /// `residual(c_k) / residual(c_{k+1})` for consecutive entries.
    pub post_mean_field_ratios: Vec<f64>,
    pub distance_monotone: bool,
}

/// Grid and step for one value of `c`.
pub fn scan_setup(template: &ScanTemplate, c_value: f64) -> Result<(PhaseGrid, f64, usize), Error> {
    let t = template;
    let a = 2.0 * std::f64::consts::PI * t.units.g * c_value * c_value;
    let xi_width = t.phi_width * (t.kappa / (2.0 * a)).sqrt();
    // ξ receives white noise of intensity DQ; equipartition splits the energy.
    let heat = a * t.dq * t.t_final;
    let phi_sd = (t.phi_width.powi(2) + heat / t.kappa).sqrt();
    let xi_sd = (xi_width.powi(2) + 0.5 * t.dq * t.t_final).sqrt();
    let shift = t.fhat.op_norm() / t.kappa;
    let grid = PhaseGrid::new(
        Axis::centered(shift + t.grid_sigmas * phi_sd, t.points)?,
        Axis::centered(t.grid_sigmas * xi_sd, t.points)?,
    )?;
    let dt = t.dt_ref * (t.c_ref / c_value).min(1.0);
    let omega = (2.0 * a * t.kappa).sqrt();
    let period = 2.0 * std::f64::consts::PI / omega;
    let every = ((period / dt) / t.records_per_period.max(1) as f64).floor().max(1.0) as usize;
    Ok((grid, dt, every))
}

/// Runs the hybrid model and its reduced analog for one value of `c`.
pub fn scan_point(template: &ScanTemplate, c_value: f64) -> Result<ScanPoint, Error> {
    let t = template;
    let (grid, dt, every) = scan_setup(t, c_value)?;
    let noise = NoiseModel::scalar(t.dc, t.dq)?;
    let (model, h) = build_mode_model(t.kappa, c_value, t.fhat.clone(), t.hq.clone(), t.units, noise.clone(), grid)?;
    let xi_width = t.phi_width * (t.kappa / (2.0 * model.xi_coefficient())).sqrt();
    let rho_q = QuantumDensity::new(t.rho_q.clone())?;
    let rho0 = model.branch_equilibrated_state(&rho_q, t.phi_width, xi_width)?;
    let params = IntegratorParams { dt, t_final: t.t_final, record_every: every, monitors: Monitors::default(), scheme: t.scheme };
    let ev = evolve(&h, &rho0, &noise, &t.units, &params)?;
    let analog = model.analog_lindblad()?;
    let traj = evolve_lindblad(&analog, &quantum_marginal(&rho0), &LindbladParams::new(dt, t.t_final, every)?)?;
    let distances: Vec<f64> = ev
        .states
        .iter()
        .zip(&traj.states)
        .map(|(s, q)| trace_distance(quantum_marginal(s).matrix().matrix(), q.matrix().matrix()))
        .collect();
    let moments = moment_report(&ev, &model);
    let t_end = *ev.times.last().expect("recorded");
    let window: Vec<f64> = ev
        .times
        .iter()
        .zip(&moments.xi_norm)
        .filter(|(time, _)| **time >= t_end - model.period() - 1e-12)
        .map(|(_, v)| *v)
        .collect();
    let last = ev.last();
    let axes = model.grid.axes();
    Ok(ScanPoint {
        c: c_value,
        dt: params.effective_dt(),
        phi_half_width: axes[PHI].max,
        xi_half_width: axes[XI].max,
        trace_distance: *distances.last().expect("recorded"),
        mean_field_residual: mean_field_residual(last, &model),
        post_mean_field_residual: post_mean_field_residual(last, &model),
        xi_norm_avg: window.iter().sum::<f64>() / window.len() as f64,
        ehrenfest: ehrenfest_check(&moments, &model),
        min_spectrum: ev.log.min_spectrum(),
        max_trace_error: ev.log.max_trace_error(),
        series: ScanSeries { moments, trace_distance: distances },
    })
}

/// Independent runs over `c_values`, assembled in the given order.
pub fn c_scan(template: &ScanTemplate, c_values: &[f64]) -> Result<ScanReport, Error> {
    let points: Vec<ScanPoint> =
        c_values.par_iter().map(|&cv| scan_point(template, cv)).collect::<Result<_, _>>()?;
    Ok(summarize(points))
}

pub fn summarize(points: Vec<ScanPoint>) -> ScanReport {
    let xs: Vec<f64> = points.iter().map(|p| p.c.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| -p.xi_norm_avg.ln()).collect();
    let xi_exponent = slope(&xs, &ys);
    let post_mean_field_ratios =
        points.windows(2).map(|w| w[0].post_mean_field_residual / w[1].post_mean_field_residual).collect();
    let distance_monotone = points.windows(2).all(|w| w[1].trace_distance < w[0].trace_distance);
    ScanReport { points, xi_exponent, post_mean_field_ratios, distance_monotone }
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
