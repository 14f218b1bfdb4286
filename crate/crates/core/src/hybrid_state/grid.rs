use serde::{Deserialize, Serialize};

use crate::error::StateError;

/// Minimum number of points per axis.
pub const MIN_POINTS: usize = 8;

/// Maximum number of classical degrees of freedom.
pub const MAX_DOFS: usize = 2;

/// Uniform closed interval `[min, max]` sampled at `n` points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self, StateError> {
        let axis = Self { min, max, n };
        axis.validate()?;
        Ok(axis)
    }

    /// Axis symmetric about zero.
    pub fn centered(half_width: f64, n: usize) -> Result<Self, StateError> {
        Self::new(-half_width, half_width, n)
    }

    pub fn validate(&self) -> Result<(), StateError> {
        if self.n < MIN_POINTS {
            return Err(StateError::InvalidGrid(format!("{} points per axis, need at least {MIN_POINTS}", self.n)));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.max > self.min) {
            return Err(StateError::InvalidGrid(format!("axis range [{}, {}] is empty", self.min, self.max)));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.min + i as f64 * self.spacing()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }
}

/// Tensor grid over classical phase space. Axes are ordered
/// `q_0, p_0, q_1, p_1, ...` and points are stored row-major with the last
/// axis varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    axes: Vec<Axis>,
}

impl PhaseGrid {
    /// One degree of freedom.
    pub fn new(q: Axis, p: Axis) -> Result<Self, StateError> {
        Self::from_axes(vec![q, p])
    }

    pub fn from_axes(axes: Vec<Axis>) -> Result<Self, StateError> {
        if axes.is_empty() || axes.len() % 2 != 0 || axes.len() > 2 * MAX_DOFS {
            return Err(StateError::InvalidGrid(format!(
                "need 1..={MAX_DOFS} (q, p) axis pairs, got {} axes",
                axes.len()
            )));
        }
        for axis in &axes {
            axis.validate()?;
        }
        Ok(Self { axes })
    }

    pub fn dofs(&self) -> usize {
        self.axes.len() / 2
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn q_axis(&self, dof: usize) -> &Axis {
        &self.axes[2 * dof]
    }

    pub fn p_axis(&self, dof: usize) -> &Axis {
        &self.axes[2 * dof + 1]
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    /// Total phase-space volume covered by the points' cells.
    pub fn domain_volume(&self) -> f64 {
        self.cell_volume() * self.len() as f64
    }

    /// Distance in flat index between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.axes[axis + 1..].iter().map(|a| a.n).product()
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut rest = flat;
        let mut idx = vec![0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            idx[k] = rest % axis.n;
            rest /= axis.n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (i, a)| acc * a.n + i)
    }

    /// Index along one axis of a flat point index.
    pub fn axis_index(&self, flat: usize, axis: usize) -> usize {
        (flat / self.stride(axis)) % self.axes[axis].n
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).iter().zip(&self.axes).map(|(&i, a)| a.coord(i)).collect()
    }

    /// Flat index of the grid point closest to `x`.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let idx: Vec<usize> = x
            .iter()
            .zip(&self.axes)
            .map(|(&v, a)| (((v - a.min) / a.spacing()).round().max(0.0) as usize).min(a.n - 1))
            .collect();
        self.flat_index(&idx)
    }

    /// True when the point lies within `cells` points of any edge.
    pub fn near_boundary(&self, flat: usize, cells: usize) -> bool {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .any(|(&i, a)| i < cells || i + cells >= a.n)
    }

    /// Sample a function of the phase-space point.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> ScalarField {
        ScalarField::new(self.clone(), (0..self.len()).map(|k| f(&self.point(k))).collect())
            .expect("length matches by construction")
    }
}

/// Real scalar function sampled on a [`PhaseGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: PhaseGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: PhaseGrid, values: Vec<f64>) -> Result<Self, StateError> {
        if values.len() != grid.len() {
            return Err(StateError::ShapeMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &PhaseGrid) -> Self {
        Self { values: vec![0.0; grid.len()], grid: grid.clone() }
    }

    pub fn constant(grid: &PhaseGrid, v: f64) -> Self {
        Self { values: vec![v; grid.len()], grid: grid.clone() }
    }

    /// The coordinate along `axis` as a field.
    pub fn coordinate(grid: &PhaseGrid, axis: usize) -> Self {
        let a = grid.axes()[axis];
        let values = (0..grid.len()).map(|k| a.coord(grid.axis_index(k, axis))).collect();
        Self { values, grid: grid.clone() }
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> PhaseGrid {
        PhaseGrid::new(Axis::new(-1.0, 1.0, 9).unwrap(), Axis::new(0.0, 3.0, 13).unwrap()).unwrap()
    }

    #[test]
    fn rejects_coarse_axes() {
        assert!(Axis::new(0.0, 1.0, 7).is_err());
        assert!(Axis::new(1.0, 1.0, 16).is_err());
    }

    #[test]
    fn index_round_trip() {
        let g = grid();
        for k in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(k)), k);
            assert_eq!(g.multi_index(k)[0], g.axis_index(k, 0));
        }
        assert_eq!(g.stride(0), 13);
        assert_eq!(g.stride(1), 1);
    }

    #[test]
    fn spacing_and_volume() {
        let g = grid();
        assert!((g.cell_volume() - 0.25 * 0.25).abs() < 1e-15);
        assert_eq!(g.nearest(&[0.0, 1.5]), g.flat_index(&[4, 6]));
        assert!(g.near_boundary(0, 2));
        assert!(!g.near_boundary(g.flat_index(&[4, 6]), 2));
    }
}
