use nalgebra::DMatrix;

use crate::error::{EvolutionError, StateError};
use crate::hybrid_state::{PhaseGrid, ScalarField};
use crate::linalg::{c, HermitianMatrix, C64};
use crate::units::Units;

/// One interaction term `f * phi(q, p)`: a quantum operator times a
/// classical field.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub op: HermitianMatrix,
    pub field: ScalarField,
}

/// `H(q, p) = HQ + HC(q, p) + sum_r f_r phi_r(q, p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridHamiltonian {
    hq: HermitianMatrix,
    hc: ScalarField,
    couplings: Vec<Coupling>,
}

impl HybridHamiltonian {
    pub fn new(hq: HermitianMatrix, hc: ScalarField, couplings: Vec<Coupling>) -> Result<Self, StateError> {
        for cp in &couplings {
            if cp.op.dim() != hq.dim() {
                return Err(StateError::ShapeMismatch(format!(
                    "coupling operator has dimension {}, quantum Hamiltonian {}",
                    cp.op.dim(),
                    hq.dim()
                )));
            }
            if cp.field.grid() != hc.grid() {
                return Err(StateError::ShapeMismatch("coupling field lives on a different grid".into()));
            }
        }
        Ok(Self { hq, hc, couplings })
    }

    /// No quantum part, no coupling.
    pub fn classical(hc: ScalarField, dim: usize) -> Self {
        Self { hq: HermitianMatrix::zeros(dim), hc, couplings: Vec::new() }
    }

    pub fn hq(&self) -> &HermitianMatrix {
        &self.hq
    }

    pub fn hc(&self) -> &ScalarField {
        &self.hc
    }

    pub fn couplings(&self) -> &[Coupling] {
        &self.couplings
    }

    pub fn grid(&self) -> &PhaseGrid {
        self.hc.grid()
    }

    pub fn dim(&self) -> usize {
        self.hq.dim()
    }

    /// Row-major blocks of `H(x)` at every grid point.
    pub fn point_blocks(&self) -> Vec<C64> {
        let d = self.dim();
        let hq = self.hq.to_block();
        let ops: Vec<Vec<C64>> = self.couplings.iter().map(|cp| cp.op.to_block()).collect();
        let mut out = Vec::with_capacity(self.grid().len() * d * d);
        for k in 0..self.grid().len() {
            let mut b = hq.clone();
            let hc = self.hc.values()[k];
            for i in 0..d {
                b[i * d + i] += c(hc);
            }
            for (cp, op) in self.couplings.iter().zip(&ops) {
                let phi = cp.field.values()[k];
                b.iter_mut().zip(op).for_each(|(x, y)| *x += y * phi);
            }
            out.extend(b);
        }
        out
    }

    /// Largest spread of the spectrum of `H(x)` over the grid, in energy units.
    pub fn max_quantum_spread(&self) -> f64 {
        let d = self.dim();
        self.point_blocks()
            .chunks_exact(d * d)
            .map(|b| {
                let ev = HermitianMatrix::from_block(b, d).eigenvalues();
                ev[d - 1] - ev[0]
            })
            .fold(0.0, f64::max)
    }
}

/// Noise correlation matrices over the coupling index: `dc` for the field
/// noise, `dq` for the operator noise.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    dc: DMatrix<f64>,
    dq: DMatrix<f64>,
}

/// Outcome of the blurring positivity test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositivityReport {
    pub holds: bool,
    /// Smallest eigenvalue of `DC^(1/2) DQ DC^(1/2)` minus `hbar^2 / 4`.
    pub margin: f64,
}

const PSD_TOL: f64 = 1e-12;

impl NoiseModel {
    pub fn new(dc: DMatrix<f64>, dq: DMatrix<f64>) -> Result<Self, EvolutionError> {
        check_psd("DC", &dc)?;
        check_psd("DQ", &dq)?;
        if dc.shape() != dq.shape() {
            return Err(EvolutionError::InvalidNoise { name: "DQ", detail: "shape differs from DC".into() });
        }
        Ok(Self { dc, dq })
    }

    pub fn scalar(dc: f64, dq: f64) -> Result<Self, EvolutionError> {
        Self::new(DMatrix::from_element(1, 1, dc), DMatrix::from_element(1, 1, dq))
    }

    pub fn zero(couplings: usize) -> Self {
        Self { dc: DMatrix::zeros(couplings, couplings), dq: DMatrix::zeros(couplings, couplings) }
    }

    /// Scalar pair on the threshold: `DQ = hbar^2 / (4 DC)`.
    pub fn saturated(dc: f64, units: &Units) -> Result<Self, EvolutionError> {
        if !(dc > 0.0) {
            return Err(EvolutionError::InvalidNoise { name: "DC", detail: "saturation needs DC > 0".into() });
        }
        Self::scalar(dc, units.positivity_bound() / dc)
    }

    pub fn dc(&self) -> &DMatrix<f64> {
        &self.dc
    }

    pub fn dq(&self) -> &DMatrix<f64> {
        &self.dq
    }

    pub fn len(&self) -> usize {
        self.dc.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_zero(&self) -> bool {
        self.dc.iter().chain(self.dq.iter()).all(|v| *v == 0.0)
    }
}

fn check_psd(name: &'static str, m: &DMatrix<f64>) -> Result<(), EvolutionError> {
    if !m.is_square() {
        return Err(EvolutionError::InvalidNoise { name, detail: "not square".into() });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(EvolutionError::InvalidNoise { name, detail: "non-finite entry".into() });
    }
    let asym = (m - m.transpose()).abs().max();
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    if asym > PSD_TOL * scale {
        return Err(EvolutionError::InvalidNoise { name, detail: format!("asymmetry {asym:e}") });
    }
    if m.nrows() > 0 {
        let min = m.clone().symmetric_eigenvalues().min();
        if min < -PSD_TOL * scale {
            return Err(EvolutionError::InvalidNoise { name, detail: format!("eigenvalue {min:e}") });
        }
    }
    Ok(())
}

/// Symmetric square root of a PSD matrix, negative rounding clipped.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let n = m.nrows();
    let root = DMatrix::from_fn(n, n, |i, j| if i == j { eig.eigenvalues[i].max(0.0).sqrt() } else { 0.0 });
    &eig.eigenvectors * root * eig.eigenvectors.transpose()
}

/// Tests `DC^(1/2) DQ DC^(1/2) >= (hbar^2 / 4) I`; in the scalar case this
/// is `DC * DQ >= hbar^2 / 4`.
pub fn positivity_condition_check(noise: &NoiseModel, units: &Units) -> PositivityReport {
    let bound = units.positivity_bound();
    if noise.is_empty() {
        return PositivityReport { holds: true, margin: f64::INFINITY };
    }
    let min = if noise.len() == 1 {
        noise.dc[(0, 0)] * noise.dq[(0, 0)]
    } else {
        let root = psd_sqrt(&noise.dc);
        let sym = &root * &noise.dq * &root;
        let sym = (&sym + sym.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    };
    let margin = min - bound;
    PositivityReport { holds: margin >= -1e-12 * bound, margin }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_examples() {
        let u = Units::default();
        let at = positivity_condition_check(&NoiseModel::scalar(0.5, 0.5).unwrap(), &u);
        assert!(at.holds && at.margin.abs() < 1e-15);
        let below = positivity_condition_check(&NoiseModel::scalar(0.25, 0.25).unwrap(), &u);
        assert!(!below.holds);
    }

    #[test]
    fn commuting_matrix_case_reduces_to_per_mode_products() {
        let u = Units::new(2.0, 1.0, 1.0).unwrap();
        let dc = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0]));
        let dq = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.25]));
        let r = positivity_condition_check(&NoiseModel::new(dc, dq).unwrap(), &u);
        assert!(r.holds && r.margin.abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_noise() {
        let dc = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(NoiseModel::new(dc, DMatrix::zeros(2, 2)).is_err());
    }
}
