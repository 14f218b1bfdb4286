use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::grid::{PhaseGrid, ScalarField};
use crate::error::StateError;
use crate::linalg::{
    block_frobenius, block_hermiticity_residual, block_min_eigenvalue, block_to_matrix, block_trace, c,
    HermitianMatrix, C64,
};

/// Normalization tolerance for hybrid and classical densities.
pub const NORM_TOL: f64 = 1e-8;
/// Negative values above `-NEGATIVE_TOL * peak` count as roundoff.
const NEGATIVE_TOL: f64 = 1e-12;
/// Trace and positivity tolerance for quantum densities.
pub const QUANTUM_TOL: f64 = 1e-10;
/// Classical density below which a conditional state is undefined.
pub const CONDITIONING_FLOOR: f64 = 1e-12;

/// A `d x d` complex block at every grid point, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    grid: PhaseGrid,
    dim: usize,
    data: Vec<C64>,
}

impl MatrixField {
    pub fn zeros(grid: &PhaseGrid, dim: usize) -> Self {
        Self { data: vec![c(0.0); grid.len() * dim * dim], grid: grid.clone(), dim }
    }

    pub fn from_data(grid: PhaseGrid, dim: usize, data: Vec<C64>) -> Result<Self, StateError> {
        if dim == 0 || data.len() != grid.len() * dim * dim {
            return Err(StateError::ShapeMismatch(format!(
                "{} entries for {} points of dimension {dim}",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, dim, data })
    }

    /// `scalar(x) * matrix` at every point.
    pub fn scalar_times(field: &ScalarField, m: &HermitianMatrix) -> Self {
        let block = m.to_block();
        let data = field.values().iter().flat_map(|&s| block.iter().map(move |z| z * s)).collect();
        Self { grid: field.grid().clone(), dim: m.dim(), data }
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn block(&self, point: usize) -> &[C64] {
        let n = self.block_len();
        &self.data[point * n..(point + 1) * n]
    }

    pub fn block_mut(&mut self, point: usize) -> &mut [C64] {
        let n = self.block_len();
        &mut self.data[point * n..(point + 1) * n]
    }

    pub fn matrix_at(&self, point: usize) -> DMatrix<C64> {
        block_to_matrix(self.block(point), self.dim)
    }

    pub fn same_shape(&self, other: &Self) -> Result<(), StateError> {
        if self.dim != other.dim || self.grid != other.grid {
            return Err(StateError::ShapeMismatch("fields live on different grids or dimensions".into()));
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b * alpha);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|a| *a *= alpha);
    }

    /// `trace` at every point.
    pub fn pointwise_trace(&self) -> Vec<f64> {
        let d = self.dim;
        self.data.chunks_exact(d * d).map(|b| block_trace(b, d).re).collect()
    }

    /// `sum_x tr(field(x)) * cell volume`.
    pub fn total_trace(&self) -> f64 {
        self.pointwise_trace().iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// `sum_x field(x) * cell volume`.
    pub fn integrate(&self) -> DMatrix<C64> {
        let n = self.block_len();
        let mut acc = vec![c(0.0); n];
        for b in self.data.chunks_exact(n) {
            acc.iter_mut().zip(b).for_each(|(a, z)| *a += z);
        }
        block_to_matrix(&acc, self.dim) * c(self.grid.cell_volume())
    }

    /// `sum_x weight(x) field(x) * cell volume`.
    pub fn weighted_integral(&self, weight: &[f64]) -> DMatrix<C64> {
        let n = self.block_len();
        let mut acc = vec![c(0.0); n];
        for (b, &w) in self.data.chunks_exact(n).zip(weight) {
            acc.iter_mut().zip(b).for_each(|(a, z)| *a += z * w);
        }
        block_to_matrix(&acc, self.dim) * c(self.grid.cell_volume())
    }

    /// Largest Hermiticity defect over all points.
    pub fn hermiticity_residual(&self) -> f64 {
        let d = self.dim;
        self.data
            .par_chunks_exact(d * d)
            .map(|b| block_hermiticity_residual(b, d))
            .reduce(|| 0.0, f64::max)
    }

    /// Smallest eigenvalue over all points.
    pub fn min_spectrum(&self) -> f64 {
        let d = self.dim;
        self.data
            .par_chunks_exact(d * d)
            .map(|b| block_min_eigenvalue(b, d))
            .reduce(|| f64::INFINITY, f64::min)
    }

    /// `sum_x ||field(x)||_F * cell volume`.
    pub fn l1_frobenius(&self) -> f64 {
        let n = self.block_len();
        self.data.chunks_exact(n).map(block_frobenius).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| f64::max(m, z.norm()))
    }
}

/// Normalized hybrid quantum-classical state: a Hermitian matrix at every
/// phase-space point with `sum tr(rho) * cell = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridDensity(MatrixField);

impl HybridDensity {
    /// Checks Hermiticity at every point and the total normalization.
    pub fn new(field: MatrixField) -> Result<Self, StateError> {
        let scale = field.max_abs().max(f64::MIN_POSITIVE);
        let residual = field.hermiticity_residual();
        if residual > 1e-12 * scale {
            return Err(StateError::NonHermitian { residual });
        }
        let total = field.total_trace();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(StateError::NotNormalized { total });
        }
        Ok(Self(field))
    }

    /// Wraps an evolved field. Normalization and positivity are monitored
    /// by the caller, not enforced.
    pub fn from_field_unchecked(field: MatrixField) -> Self {
        Self(field)
    }

    pub fn field(&self) -> &MatrixField {
        &self.0
    }

    pub fn into_field(self) -> MatrixField {
        self.0
    }

    pub fn grid(&self) -> &PhaseGrid {
        self.0.grid()
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn normalization(&self) -> f64 {
        self.0.total_trace()
    }

    /// Construct a state from a quantum factor per point.
    pub fn from_fn(grid: &PhaseGrid, dim: usize, f: impl Fn(&[f64]) -> DMatrix<C64>) -> Result<Self, StateError> {
        let mut field = MatrixField::zeros(grid, dim);
        for k in 0..grid.len() {
            let m = f(&grid.point(k));
            let b = field.block_mut(k);
            for i in 0..dim {
                for j in 0..dim {
                    b[i * dim + j] = m[(i, j)];
                }
            }
        }
        Self::new(field)
    }

    /// Equal-weight mixture `sum_k w_k rho_k`; weights must sum to one.
    pub fn mixture(states: &[(f64, &HybridDensity)]) -> Result<Self, StateError> {
        let first = states.first().ok_or_else(|| StateError::ShapeMismatch("empty mixture".into()))?.1;
        let mut field = MatrixField::zeros(first.grid(), first.dim());
        for (w, s) in states {
            field.same_shape(s.field())?;
            field.axpy(*w, s.field());
        }
        Self::new(field)
    }

    /// Writes one CSV row per grid point: optional `t`, the phase-space
    /// coordinates, then the `d^2` real components of the block (diagonal,
    /// then real and imaginary parts of the upper triangle).
    pub fn write_csv<W: Write>(&self, out: &mut W, t: Option<f64>, header: bool) -> std::io::Result<()> {
        let d = self.dim();
        let grid = self.grid();
        if header {
            let mut cols: Vec<String> = Vec::new();
            if t.is_some() {
                cols.push("t".into());
            }
            for dof in 0..grid.dofs() {
                if grid.dofs() == 1 {
                    cols.extend(["q".into(), "p".into()]);
                } else {
                    cols.extend([format!("q{dof}"), format!("p{dof}")]);
                }
            }
            cols.extend(component_names(d));
            writeln!(out, "{}", cols.join(","))?;
        }
        let mut line = String::new();
        for k in 0..grid.len() {
            line.clear();
            if let Some(t) = t {
                line.push_str(&format!("{t:.12e},"));
            }
            for x in grid.point(k) {
                line.push_str(&format!("{x:.12e},"));
            }
            let comps = block_components(self.0.block(k), d);
            let body: Vec<String> = comps.iter().map(|v| format!("{v:.12e}")).collect();
            line.push_str(&body.join(","));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Column names for the real components of a `d x d` Hermitian block.
pub fn component_names(d: usize) -> Vec<String> {
    let mut names: Vec<String> = (0..d).map(|i| format!("re{i}{i}")).collect();
    for i in 0..d {
        for j in i + 1..d {
            names.push(format!("re{i}{j}"));
            names.push(format!("im{i}{j}"));
        }
    }
    names
}

pub fn block_components(b: &[C64], d: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|i| b[i * d + i].re).collect();
    for i in 0..d {
        for j in i + 1..d {
            v.push(b[i * d + j].re);
            v.push(b[i * d + j].im);
        }
    }
    v
}

/// Hermitian-operator-valued observable on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridObservable(MatrixField);

impl HybridObservable {
    pub fn new(field: MatrixField) -> Result<Self, StateError> {
        let scale = field.max_abs().max(f64::MIN_POSITIVE);
        let residual = field.hermiticity_residual();
        if residual > 1e-12 * scale {
            return Err(StateError::NonHermitian { residual });
        }
        Ok(Self(field))
    }

    /// `A(x) = field(x) * op`.
    pub fn scalar_times(field: &ScalarField, op: &HermitianMatrix) -> Self {
        Self(MatrixField::scalar_times(field, op))
    }

    /// `A(x) = field(x) * identity`.
    pub fn classical(field: &ScalarField, dim: usize) -> Self {
        Self::scalar_times(field, &HermitianMatrix::identity(dim))
    }

    /// The same operator at every point.
    pub fn quantum(grid: &PhaseGrid, op: &HermitianMatrix) -> Self {
        Self::scalar_times(&ScalarField::constant(grid, 1.0), op)
    }

    pub fn field(&self) -> &MatrixField {
        &self.0
    }
}

/// Normalized, positive semidefinite density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumDensity(HermitianMatrix);

impl QuantumDensity {
    pub fn new(m: HermitianMatrix) -> Result<Self, StateError> {
        let total = m.trace();
        if (total - 1.0).abs() > QUANTUM_TOL {
            return Err(StateError::NotNormalized { total });
        }
        let min_eigenvalue = m.min_eigenvalue();
        if min_eigenvalue < -QUANTUM_TOL {
            return Err(StateError::NotPositive { min_eigenvalue });
        }
        Ok(Self(m))
    }

    /// Skips the positivity check, for marginals of monitored states.
    pub fn from_matrix_unchecked(m: HermitianMatrix) -> Self {
        Self(m)
    }

    pub fn pure(v: &[C64]) -> Self {
        Self(HermitianMatrix::projector(v))
    }

    pub fn maximally_mixed(d: usize) -> Self {
        Self(HermitianMatrix::identity(d).scaled(1.0 / d as f64))
    }

    pub fn matrix(&self) -> &HermitianMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn purity(&self) -> f64 {
        let m = self.0.matrix();
        (m * m).trace().re
    }
}

/// Non-negative Liouville density integrating to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalDensity(ScalarField);

impl ClassicalDensity {
    pub fn new(field: ScalarField) -> Result<Self, StateError> {
        // Evolved marginals carry roundoff below zero; only real negativity fails.
        let floor = -NEGATIVE_TOL * field.max_abs();
        if let Some((index, &value)) = field.values().iter().enumerate().find(|(_, v)| **v < floor) {
            return Err(StateError::NegativeDensity { index, value });
        }
        let total = field.integral();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(StateError::NotNormalized { total });
        }
        Ok(Self(field))
    }

    /// Rescales a non-negative field to unit integral.
    pub fn normalized(field: ScalarField) -> Result<Self, StateError> {
        let total = field.integral();
        if !(total > 0.0 && total.is_finite()) {
            return Err(StateError::NotNormalized { total });
        }
        Self::new(field.map(|v| v / total))
    }

    /// Product Gaussian with the given means and standard deviations per
    /// axis, renormalized on the grid.
    pub fn gaussian(grid: &PhaseGrid, mean: &[f64], std: &[f64]) -> Result<Self, StateError> {
        if mean.len() != grid.axes().len() || std.len() != grid.axes().len() {
            return Err(StateError::ShapeMismatch("one mean and width per axis".into()));
        }
        Self::normalized(grid.sample(|x| {
            let e: f64 = x.iter().zip(mean).zip(std).map(|((x, m), s)| ((x - m) / s).powi(2)).sum();
            (-0.5 * e).exp()
        }))
    }

    pub fn uniform(grid: &PhaseGrid) -> Self {
        Self(ScalarField::constant(grid, 1.0 / grid.domain_volume()))
    }

    /// Sum of densities with non-negative weights summing to one.
    pub fn mixture(parts: &[(f64, &ClassicalDensity)]) -> Result<Self, StateError> {
        let first = parts.first().ok_or_else(|| StateError::ShapeMismatch("empty mixture".into()))?.1;
        let mut values = vec![0.0; first.grid().len()];
        for (w, d) in parts {
            if d.grid() != first.grid() {
                return Err(StateError::ShapeMismatch("mixture over different grids".into()));
            }
            values.iter_mut().zip(d.values()).for_each(|(a, b)| *a += w * b);
        }
        Self::new(ScalarField::new(first.grid().clone(), values)?)
    }

    pub fn field(&self) -> &ScalarField {
        &self.0
    }

    pub fn grid(&self) -> &PhaseGrid {
        self.0.grid()
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    /// Mean of the coordinate along `axis`.
    pub fn mean(&self, axis: usize) -> f64 {
        let x = ScalarField::coordinate(self.grid(), axis);
        x.values().iter().zip(self.values()).map(|(a, b)| a * b).sum::<f64>() * self.grid().cell_volume()
    }

    pub fn variance(&self, axis: usize) -> f64 {
        let m = self.mean(axis);
        let x = ScalarField::coordinate(self.grid(), axis);
        x.values().iter().zip(self.values()).map(|(a, b)| (a - m).powi(2) * b).sum::<f64>()
            * self.grid().cell_volume()
    }
}

/// `rho(x) = rho_q * rho_c(x)`.
pub fn product_state(rho_q: &QuantumDensity, rho_c: &ClassicalDensity) -> Result<HybridDensity, StateError> {
    QuantumDensity::new(rho_q.matrix().clone())?;
    ClassicalDensity::new(rho_c.field().clone())?;
    HybridDensity::new(MatrixField::scalar_times(rho_c.field(), rho_q.matrix()))
}

/// `sum_x rho(x) * cell`.
pub fn quantum_marginal(rho: &HybridDensity) -> QuantumDensity {
    QuantumDensity::from_matrix_unchecked(HermitianMatrix::hermitize(&rho.field().integrate()))
}

/// `tr rho(x)` at every point. Negative entries only arise for states that
/// have lost pointwise positivity.
pub fn classical_marginal(rho: &HybridDensity) -> ScalarField {
    ScalarField::new(rho.grid().clone(), rho.field().pointwise_trace()).expect("same grid")
}

/// As [`classical_marginal`], validated as a density.
pub fn classical_density(rho: &HybridDensity) -> Result<ClassicalDensity, StateError> {
    ClassicalDensity::new(classical_marginal(rho))
}

/// `rho(x) / tr rho(x)` at one grid point.
pub fn conditional_quantum_state(rho: &HybridDensity, point: usize) -> Result<QuantumDensity, StateError> {
    if point >= rho.grid().len() {
        return Err(StateError::ShapeMismatch(format!("point {point} outside grid of {}", rho.grid().len())));
    }
    let b = rho.field().block(point);
    let density = block_trace(b, rho.dim()).re;
    if !(density > CONDITIONING_FLOOR) {
        return Err(StateError::DegenerateConditioning { point, density });
    }
    let m = HermitianMatrix::hermitize(&block_to_matrix(b, rho.dim())).scaled(1.0 / density);
    Ok(QuantumDensity::from_matrix_unchecked(m))
}

/// `sum_x tr(A(x) rho(x)) * cell`.
pub fn expectation(rho: &HybridDensity, a: &HybridObservable) -> Result<f64, StateError> {
    rho.field().same_shape(a.field())?;
    let d = rho.dim();
    let mut acc = c(0.0);
    for k in 0..rho.grid().len() {
        let (x, y) = (a.field().block(k), rho.field().block(k));
        for i in 0..d {
            for j in 0..d {
                acc += x[i * d + j] * y[j * d + i];
            }
        }
    }
    Ok(acc.re * rho.grid().cell_volume())
}

/// Smallest eigenvalue of `rho(x)` over the grid.
pub fn min_spectrum(rho: &HybridDensity) -> f64 {
    rho.field().min_spectrum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid_state::grid::Axis;

    fn grid() -> PhaseGrid {
        PhaseGrid::new(Axis::centered(6.0, 33).unwrap(), Axis::centered(6.0, 33).unwrap()).unwrap()
    }

    #[test]
    fn product_state_marginals_round_trip() {
        let g = grid();
        let rq = QuantumDensity::new(HermitianMatrix::diagonal(&[1.0, 0.0])).unwrap();
        let rc = ClassicalDensity::gaussian(&g, &[0.5, -0.3], &[1.0, 1.2]).unwrap();
        let rho = product_state(&rq, &rc).unwrap();
        let q = quantum_marginal(&rho);
        assert!((q.matrix().matrix() - rq.matrix().matrix()).norm() < 1e-12);
        let cm = classical_marginal(&rho);
        for (a, b) in cm.values().iter().zip(rc.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_maximally_mixed_point_value() {
        let g = grid();
        let rho = product_state(&QuantumDensity::maximally_mixed(2), &ClassicalDensity::uniform(&g)).unwrap();
        let want = 1.0 / (2.0 * g.domain_volume());
        let b = rho.field().block(17);
        assert!((b[0].re - want).abs() < 1e-15 && (b[3].re - want).abs() < 1e-15);
        assert_eq!(b[1], c(0.0));
    }

    #[test]
    fn degenerate_conditioning_is_reported() {
        let g = grid();
        let rc = ClassicalDensity::gaussian(&g, &[0.0, 0.0], &[0.2, 0.2]).unwrap();
        let rho = product_state(&QuantumDensity::maximally_mixed(2), &rc).unwrap();
        assert!(matches!(conditional_quantum_state(&rho, 0), Err(StateError::DegenerateConditioning { .. })));
    }

    #[test]
    fn min_spectrum_sees_a_planted_negative_point() {
        let g = grid();
        let rc = ClassicalDensity::uniform(&g);
        let rho = product_state(&QuantumDensity::maximally_mixed(2), &rc).unwrap();
        let mut field = rho.into_field();
        let density = 1.0 / g.domain_volume();
        let b = field.block_mut(40);
        b[0] = c(density);
        b[3] = c(-0.1 * density);
        let planted = HybridDensity::from_field_unchecked(field);
        assert!((min_spectrum(&planted) + 0.1 * density).abs() < 1e-15);
    }

    #[test]
    fn rejects_unnormalized_classical_density() {
        let g = grid();
        let f = ScalarField::constant(&g, 1.0);
        assert!(matches!(ClassicalDensity::new(f), Err(StateError::NotNormalized { .. })));
    }
}
