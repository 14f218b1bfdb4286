//! Right-hand sides of the Aleksandrov equation and the hybrid master
//! equation.

use rayon::prelude::*;

use super::brackets::{accumulate_bracket, Differentiator, Scheme};
use super::hamiltonian::{HybridHamiltonian, NoiseModel};
use crate::error::{EvolutionError, StateError};
use crate::hybrid_state::{HybridDensity, MatrixField, ScalarField};
use crate::linalg::{block_commutator_acc, block_sym_product_acc, DoubleCommutator, HermitianMatrix, C64};
use crate::units::Units;

/// Precomputed generator of the hybrid master equation for one Hamiltonian
/// and noise model.
///
/// Coefficient fields (`HC`, `phi_r`) are always differentiated with
/// central stencils, which are exact for the quadratic fields used here;
/// the state itself uses the configured [`Scheme`]. Under the spectral
/// scheme brackets with non-constant coefficients are taken in
/// skew-symmetric form, half advective and half flux, which keeps Fourier
/// collocation free of aliasing growth.
#[derive(Clone, Debug)]
pub struct Generator {
    hbar: f64,
    dim: usize,
    diff: Differentiator,
    point_h: Vec<C64>,
    grad_hc: Vec<ScalarField>,
    ops: Vec<Vec<C64>>,
    grad_phi: Vec<Vec<ScalarField>>,
    /// Gradients of `chi_s = sum_r DQ_rs phi_r`, one entry per coupling.
    grad_chi: Vec<Vec<ScalarField>>,
    dissipator: Option<DoubleCommutator>,
    with_diffusion: bool,
}

impl Generator {
    /// Bare Aleksandrov generator.
    pub fn aleksandrov(h: &HybridHamiltonian, units: &Units, scheme: Scheme) -> Self {
        let coeff = Differentiator::new(h.grid(), Scheme::Central);
        let grad_phi: Vec<Vec<ScalarField>> =
            h.couplings().iter().map(|cp| coeff.scalar_gradient(&cp.field)).collect();
        Self {
            hbar: units.hbar,
            dim: h.dim(),
            diff: Differentiator::new(h.grid(), scheme),
            point_h: h.point_blocks(),
            grad_hc: coeff.scalar_gradient(h.hc()),
            ops: h.couplings().iter().map(|cp| cp.op.to_block()).collect(),
            grad_chi: Vec::new(),
            grad_phi,
            dissipator: None,
            with_diffusion: false,
        }
    }

    /// Full hybrid master equation generator.
    pub fn master(
        h: &HybridHamiltonian,
        noise: &NoiseModel,
        units: &Units,
        scheme: Scheme,
    ) -> Result<Self, EvolutionError> {
        let n = h.couplings().len();
        if noise.len() != n {
            return Err(EvolutionError::InvalidNoise {
                name: "DC",
                detail: format!("{} noise channels for {n} couplings", noise.len()),
            });
        }
        let mut g = Self::aleksandrov(h, units, scheme);
        let (dc, dq) = (noise.dc(), noise.dq());
        if dc.iter().any(|v| *v != 0.0) {
            let diss = DoubleCommutator::new(&g.ops, |r, s| dc[(r, s)], g.dim);
            g.dissipator = Some(diss.scaled(-0.5 / (units.hbar * units.hbar)));
        }
        if dq.iter().any(|v| *v != 0.0) {
            g.with_diffusion = true;
            g.grad_chi = (0..n)
                .map(|s| {
                    (0..g.grad_hc.len())
                        .map(|axis| {
                            let mut acc = ScalarField::zeros(h.grid());
                            for r in 0..n {
                                let w = dq[(r, s)];
                                for (a, b) in acc.values_mut().iter_mut().zip(g.grad_phi[r][axis].values()) {
                                    *a += w * b;
                                }
                            }
                            acc
                        })
                        .collect()
                })
                .collect();
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scheme(&self) -> Scheme {
        self.diff.scheme()
    }

    pub fn grid(&self) -> &crate::hybrid_state::PhaseGrid {
        self.diff.grid()
    }

    fn check(&self, rho: &MatrixField) -> Result<(), StateError> {
        if rho.dim() != self.dim || rho.grid() != self.diff.grid() {
            return Err(StateError::ShapeMismatch("state does not match the Hamiltonian".into()));
        }
        Ok(())
    }

    /// `out += -(i/hbar) [H(x), rho(x)]`.
    pub fn add_dirac(&self, rho: &MatrixField, out: &mut MatrixField) {
        let d = self.dim;
        let n = d * d;
        let alpha = C64::new(0.0, -1.0 / self.hbar);
        out.data_mut().par_chunks_mut(n).zip(rho.data().par_chunks(n)).enumerate().for_each(|(k, (o, r))| {
            block_commutator_acc(&self.point_h[k * n..(k + 1) * n], r, alpha, o, d);
        });
    }

    /// `out += alpha * {s, m}` for a scalar coefficient `s`.
    fn add_bracket(
        &self,
        grad_s: &[ScalarField],
        m: &MatrixField,
        grad_m: &[MatrixField],
        alpha: f64,
        out: &mut MatrixField,
    ) {
        let uniform = grad_s.iter().all(|g| g.values().iter().all(|v| *v == g.values()[0]));
        if self.diff.scheme() == Scheme::Central || uniform {
            accumulate_bracket(grad_s, grad_m, alpha, out);
            return;
        }
        accumulate_bracket(grad_s, grad_m, 0.5 * alpha, out);
        // {s, m} = d/dp (s_q m) - d/dq (s_p m) for smooth s
        let comps = m.block_len();
        for dof in 0..grad_s.len() / 2 {
            let (q, p) = (2 * dof, 2 * dof + 1);
            for (coef, axis, sign) in [(&grad_s[q], p, 1.0), (&grad_s[p], q, -1.0)] {
                if coef.values().iter().all(|v| *v == 0.0) {
                    continue;
                }
                let flux: Vec<C64> = m
                    .data()
                    .par_chunks(comps)
                    .zip(coef.values().par_iter())
                    .flat_map_iter(|(b, &w)| b.iter().map(move |z| z * w))
                    .collect();
                let dflux = self.diff.apply(&flux, comps, axis);
                let scale = 0.5 * alpha * sign;
                out.data_mut().par_iter_mut().zip(dflux.par_iter()).for_each(|(o, f)| *o += f * scale);
            }
        }
    }

    /// `out += Herm {H, rho}_P`. Returns `{phi_r, rho}` for reuse.
    fn add_poisson(&self, rho: &MatrixField, grad_rho: &[MatrixField], out: &mut MatrixField) -> Vec<MatrixField> {
        self.add_bracket(&self.grad_hc, rho, grad_rho, 1.0, out);
        let d = self.dim;
        let n = d * d;
        let mut brackets = Vec::with_capacity(self.ops.len());
        for (op, grad_phi) in self.ops.iter().zip(&self.grad_phi) {
            let mut b = MatrixField::zeros(out.grid(), d);
            self.add_bracket(grad_phi, rho, grad_rho, 1.0, &mut b);
            out.data_mut().par_chunks_mut(n).zip(b.data().par_chunks(n)).for_each(|(o, x)| {
                block_sym_product_acc(op, x, 1.0, o, d);
            });
            brackets.push(b);
        }
        brackets
    }

    fn add_noise(&self, rho: &MatrixField, brackets: &[MatrixField], out: &mut MatrixField) {
        if let Some(diss) = &self.dissipator {
            let n = self.dim * self.dim;
            out.data_mut().par_chunks_mut(n).zip(rho.data().par_chunks(n)).for_each(|(o, r)| {
                diss.apply_acc(r, 1.0, o);
            });
        }
        if self.with_diffusion {
            for (b, grad_chi) in brackets.iter().zip(&self.grad_chi) {
                let gb = self.diff.matrix_gradient(b);
                self.add_bracket(grad_chi, b, &gb, 0.5, out);
            }
        }
    }

    /// Time derivative of the state.
    pub fn rhs(&self, rho: &MatrixField) -> Result<MatrixField, StateError> {
        self.check(rho)?;
        let mut out = MatrixField::zeros(rho.grid(), self.dim);
        self.add_dirac(rho, &mut out);
        let grad = self.diff.matrix_gradient(rho);
        let brackets = self.add_poisson(rho, &grad, &mut out);
        self.add_noise(rho, &brackets, &mut out);
        Ok(out)
    }

    /// Scheme-specific cleanup after a completed step.
    pub fn post_step(&self, rho: &mut MatrixField) {
        self.diff.filter(rho);
    }

    /// Largest quantum transition frequency `max spread(H(x)) / hbar`.
    pub fn max_quantum_frequency(&self) -> f64 {
        let d = self.dim;
        self.point_h
            .chunks_exact(d * d)
            .map(|b| {
                let ev = HermitianMatrix::from_block(b, d).eigenvalues();
                (ev[d - 1] - ev[0]) / self.hbar
            })
            .fold(0.0, f64::max)
    }

    /// Largest phase-space transport speed in grid cells per unit time.
    pub fn max_transport_rate(&self) -> f64 {
        let grid = self.diff.grid();
        let mut rate: f64 = 0.0;
        for k in 0..grid.len() {
            let mut r = 0.0;
            for dof in 0..grid.dofs() {
                let (q, p) = (2 * dof, 2 * dof + 1);
                let mut vq = self.grad_hc[p].values()[k].abs();
                let mut vp = self.grad_hc[q].values()[k].abs();
                for (gphi, op) in self.grad_phi.iter().zip(&self.ops) {
                    let norm = HermitianMatrix::from_block(op, self.dim).op_norm();
                    vq += gphi[p].values()[k].abs() * norm;
                    vp += gphi[q].values()[k].abs() * norm;
                }
                r += vq / grid.axes()[q].spacing() + vp / grid.axes()[p].spacing();
            }
            rate = rate.max(r);
        }
        rate
    }
}

/// `-(i/hbar) [H(x), rho(x)]` at every point.
pub fn dirac_term(h: &HybridHamiltonian, rho: &HybridDensity, units: &Units) -> Result<MatrixField, StateError> {
    let g = Generator::aleksandrov(h, units, Scheme::Central);
    g.check(rho.field())?;
    let mut out = MatrixField::zeros(rho.grid(), rho.dim());
    g.add_dirac(rho.field(), &mut out);
    Ok(out)
}

/// `-(i/hbar) [H, rho] + Herm {H, rho}_P` with central differences.
pub fn aleksandrov_rhs(h: &HybridHamiltonian, rho: &HybridDensity, units: &Units) -> Result<MatrixField, StateError> {
    Generator::aleksandrov(h, units, Scheme::Central).rhs(rho.field())
}

/// Aleksandrov flow plus the decoherence double commutator and the
/// classical diffusion double bracket, with central differences.
pub fn hybrid_master_rhs(
    h: &HybridHamiltonian,
    rho: &HybridDensity,
    noise: &NoiseModel,
    units: &Units,
) -> Result<MatrixField, EvolutionError> {
    Ok(Generator::master(h, noise, units, Scheme::Central)?.rhs(rho.field())?)
}
