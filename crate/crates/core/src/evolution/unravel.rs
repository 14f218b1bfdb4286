//! Monte-Carlo unraveling of the hybrid master equation into noisy
//! Aleksandrov trajectories.
//!
//! Each step is a deterministic Runge-Kutta step of the bare Aleksandrov
//! flow followed by a kick from the sampled noise Hamiltonian
//! `sum_r f_r dW_phi_r + phi_r dW_f_r`: a uniform unitary for the first part
//! and a phase-space translation along the Hamiltonian vector field of
//! `phi_r` for the second. The product `df * dphi` is never sampled.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::brackets::{Differentiator, Scheme};
use super::hamiltonian::{psd_sqrt, HybridHamiltonian, NoiseModel};
use super::integrate::{rk4_step, Evolution, IntegratorParams, MonitorLog, MonitorState};
use super::rhs::Generator;
use crate::error::EvolutionError;
use crate::hybrid_state::{HybridDensity, MatrixField, PhaseGrid};
use crate::linalg::{block_to_matrix, c, matrix_to_block, HermitianMatrix, C64};
use crate::units::Units;

/// Number of trajectory chunks summed in a fixed order, independent of the
/// thread count.
const CHUNKS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    pub n_traj: usize,
    pub seed: Option<u64>,
}

/// Counter-based generator for trajectory `traj` at step `step`.
///
/// The stream is selected by the trajectory and the block position by the
/// step, so any trajectory can be replayed in isolation.
pub fn step_rng(seed: u64, traj: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(traj);
    rng.set_word_pos(u128::from(step) << 16);
    rng
}

/// Correlated Gaussian increments with covariance `root^2 * dt`.
fn correlated(root: &DMatrix<f64>, dt: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let z = DVector::from_fn(root.nrows(), |_, _| StandardNormal.sample(rng));
    root * z * dt.sqrt()
}

/// Noise kicks of the unraveled dynamics.
#[derive(Clone, Debug)]
struct Kicks {
    hbar: f64,
    dim: usize,
    ops: Vec<HermitianMatrix>,
    root_dc: DMatrix<f64>,
    root_dq: DMatrix<f64>,
    /// Translation per unit `dW_f_r` along each axis.
    velocity: Vec<Vec<f64>>,
    quantum: bool,
    classical: bool,
}

impl Kicks {
    fn new(h: &HybridHamiltonian, noise: &NoiseModel, units: &Units) -> Result<Self, EvolutionError> {
        let grid = h.grid();
        let diff = Differentiator::new(grid, Scheme::Central);
        let mut velocity = Vec::new();
        for cp in h.couplings() {
            let grad = diff.scalar_gradient(&cp.field);
            let mut v = vec![0.0; grid.axes().len()];
            for dof in 0..grid.dofs() {
                let (q, p) = (2 * dof, 2 * dof + 1);
                let (gq, gp) = (&grad[q], &grad[p]);
                let (mq, mp) = (gq.values()[0], gp.values()[0]);
                let spread = gq.values().iter().chain(gp.values()).map(|x| x.abs()).fold(0.0, f64::max);
                let flat = gq.values().iter().all(|x| (x - mq).abs() <= 1e-9 * spread.max(1.0))
                    && gp.values().iter().all(|x| (x - mp).abs() <= 1e-9 * spread.max(1.0));
                if !flat && noise.dq().iter().any(|x| *x != 0.0) {
                    return Err(EvolutionError::InvalidParams(
                        "classical noise kicks need coupling fields linear in phase space".into(),
                    ));
                }
                // flow of {phi, .}: q -> q - s dphi/dp, p -> p + s dphi/dq
                v[q] = -mp;
                v[p] = mq;
            }
            velocity.push(v);
        }
        Ok(Self {
            hbar: units.hbar,
            dim: h.dim(),
            ops: h.couplings().iter().map(|cp| cp.op.clone()).collect(),
            root_dc: psd_sqrt(noise.dc()),
            root_dq: psd_sqrt(noise.dq()),
            velocity,
            quantum: noise.dc().iter().any(|x| *x != 0.0),
            classical: noise.dq().iter().any(|x| *x != 0.0),
        })
    }

    fn apply(&self, rho: &mut MatrixField, dt: f64, rng: &mut ChaCha8Rng) {
        let n = self.ops.len();
        if self.quantum {
            let dw = correlated(&self.root_dc, dt, rng);
            let mut gen = DMatrix::<C64>::zeros(self.dim, self.dim);
            for r in 0..n {
                gen += self.ops[r].matrix() * c(dw[r]);
            }
            let u = HermitianMatrix::hermitize(&gen).unitary_exp(1.0 / self.hbar);
            let ud = u.adjoint();
            let d = self.dim;
            rho.data_mut().par_chunks_mut(d * d).for_each(|b| {
                let m = block_to_matrix(b, d);
                b.copy_from_slice(&matrix_to_block(&(&u * m * &ud)));
            });
        }
        if self.classical {
            let dw = correlated(&self.root_dq, dt, rng);
            let axes = rho.grid().axes().len();
            let mut shift = vec![0.0; axes];
            for r in 0..n {
                for (s, v) in shift.iter_mut().zip(&self.velocity[r]) {
                    *s += dw[r] * v;
                }
            }
            for (axis, s) in shift.into_iter().enumerate() {
                if s != 0.0 {
                    translate(rho, axis, s);
                }
            }
        }
    }
}

/// `rho(x) <- rho(x + shift e_axis)` by four-point Lagrange interpolation,
/// zero outside the grid.
pub fn translate(rho: &mut MatrixField, axis: usize, shift: f64) {
    let grid: PhaseGrid = rho.grid().clone();
    let a = grid.axes()[axis];
    let u = shift / a.spacing();
    let base = u.floor();
    let t = u - base;
    let base = base as i64;
    let w = [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ];
    let comps = rho.block_len();
    let stride = grid.stride(axis) * comps;
    let n = a.n as i64;
    let block = a.n * stride;
    let src = rho.data().to_vec();
    rho.data_mut().par_chunks_mut(block).enumerate().for_each(|(o, out)| {
        let off = o * block;
        for i in 0..n {
            for inner in 0..stride {
                let mut acc = c(0.0);
                for (m, wm) in w.iter().enumerate() {
                    let j = i + base + m as i64 - 1;
                    if (0..n).contains(&j) {
                        acc += src[off + j as usize * stride + inner] * *wm;
                    }
                }
                out[i as usize * stride + inner] = acc;
            }
        }
    });
}

/// Ensemble-averaged noisy Aleksandrov trajectories.
///
/// Trajectories are split into a fixed number of chunks that run
/// concurrently; chunk sums are added in order, so the result depends only
/// on the seed and the inputs.
pub fn unravel_ensemble(
    h: &HybridHamiltonian,
    rho0: &HybridDensity,
    noise: &NoiseModel,
    units: &Units,
    params: &IntegratorParams,
    ensemble: &TrajectoryEnsemble,
) -> Result<Evolution, EvolutionError> {
    let seed = ensemble.seed.ok_or(EvolutionError::NonReproducibleSeed)?;
    params.validate()?;
    if ensemble.n_traj == 0 {
        return Err(EvolutionError::InvalidParams("n_traj must be positive".into()));
    }
    if noise.len() != h.couplings().len() {
        return Err(EvolutionError::InvalidNoise {
            name: "DC",
            detail: format!("{} noise channels for {} couplings", noise.len(), h.couplings().len()),
        });
    }
    let monitor = MonitorState::new(rho0.field(), params.monitors)?;
    let g = Generator::aleksandrov(h, units, params.scheme);
    let kicks = Kicks::new(h, noise, units)?;
    let steps = params.steps();
    let dt = params.effective_dt();
    let record_steps: Vec<usize> =
        (1..=steps).filter(|s| s % params.record_every == 0 || *s == steps).collect();

    let n = ensemble.n_traj;
    let chunk = n.div_ceil(CHUNKS);
    let chunk_sums: Vec<Result<Vec<MatrixField>, EvolutionError>> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|ci| {
            let mut sums: Vec<MatrixField> =
                record_steps.iter().map(|_| MatrixField::zeros(rho0.grid(), rho0.dim())).collect();
            for traj in ci * chunk..((ci + 1) * chunk).min(n) {
                let mut rho = rho0.field().clone();
                let mut slot = 0;
                for step in 1..=steps {
                    rho = rk4_step(&g, &rho, dt)?;
                    let mut rng = step_rng(seed, traj as u64, step as u64);
                    kicks.apply(&mut rho, dt, &mut rng);
                    if slot < record_steps.len() && record_steps[slot] == step {
                        sums[slot].axpy(1.0, &rho);
                        slot += 1;
                    }
                }
            }
            Ok(sums)
        })
        .collect();

    let mut totals: Vec<MatrixField> =
        record_steps.iter().map(|_| MatrixField::zeros(rho0.grid(), rho0.dim())).collect();
    for part in chunk_sums {
        for (t, s) in totals.iter_mut().zip(part?) {
            t.axpy(1.0, &s);
        }
    }

    let mut times = vec![0.0];
    let mut states = vec![rho0.clone()];
    let mut log = MonitorLog { records: vec![monitor.observe(rho0.field(), 0.0)?] };
    let mut herm = rho0.field().hermiticity_residual();
    for (step, mut field) in record_steps.into_iter().zip(totals) {
        field.scale(1.0 / n as f64);
        let t = step as f64 * dt;
        log.records.push(monitor.observe(&field, t)?);
        herm = herm.max(field.hermiticity_residual());
        times.push(t);
        states.push(HybridDensity::from_field_unchecked(field));
    }
    Ok(Evolution { times, states, log, max_hermiticity_residual: herm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn step_streams_are_replayable_and_distinct() {
        let a: u64 = step_rng(7, 3, 11).random();
        let b: u64 = step_rng(7, 3, 11).random();
        let c: u64 = step_rng(7, 4, 11).random();
        let d: u64 = step_rng(7, 3, 12).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn integer_translation_is_exact() {
        use crate::hybrid_state::{Axis, ScalarField};
        let g = PhaseGrid::new(Axis::new(0.0, 9.0, 10).unwrap(), Axis::new(0.0, 9.0, 10).unwrap()).unwrap();
        let f = MatrixField::scalar_times(&ScalarField::coordinate(&g, 1), &HermitianMatrix::identity(1));
        let mut shifted = f.clone();
        translate(&mut shifted, 1, 2.0);
        for k in 0..g.len() {
            let p = g.multi_index(k)[1];
            let want = if p + 2 < 10 { (p + 2) as f64 } else { 0.0 };
            assert!((shifted.data()[k].re - want).abs() < 1e-12);
        }
    }

    #[test]
    fn cubic_translation_is_exact_on_cubics_in_the_interior() {
        use crate::hybrid_state::Axis;
        let g = PhaseGrid::new(Axis::new(0.0, 3.0, 16).unwrap(), Axis::new(-1.0, 1.0, 16).unwrap()).unwrap();
        let poly = |x: f64| 0.3 * x * x * x - x + 2.0;
        let f = MatrixField::scalar_times(&g.sample(|x| poly(x[0])), &HermitianMatrix::identity(1));
        let mut shifted = f.clone();
        translate(&mut shifted, 0, 0.37);
        for k in 0..g.len() {
            let i = g.multi_index(k)[0];
            if i + 3 < 16 {
                let x = g.point(k)[0];
                assert!((shifted.data()[k].re - poly(x + 0.37)).abs() < 1e-12);
            }
        }
    }
}
