//! Phase-space derivatives and the Poisson bracket.
//!
//! `{A, B} = sum_n dA/dq_n dB/dp_n - dB/dq_n dA/dp_n`.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::StateError;
use crate::hybrid_state::{MatrixField, PhaseGrid, ScalarField};
use crate::linalg::{c, C64};

/// Discretization of phase-space derivatives applied to the state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Second-order central differences, second-order one-sided at the edges.
    #[default]
    Central,
    /// Fourier differentiation along each axis, with a high-order
    /// exponential filter applied to the state after every step. Requires
    /// the state to vanish near the boundary, which the boundary monitor
    /// certifies.
    Spectral,
}

type Plan = Arc<dyn Fft<f64>>;

/// Order and strength of the exponential filter of the spectral scheme;
/// the strength makes the Nyquist mode decay to machine precision.
pub const FILTER_ORDER: i32 = 32;
pub const FILTER_STRENGTH: f64 = 36.0;

/// Reusable derivative operator for one grid and scheme.
#[derive(Clone)]
pub struct Differentiator {
    grid: PhaseGrid,
    scheme: Scheme,
    spectral: Vec<Option<(Plan, Plan, Vec<f64>)>>,
}

impl std::fmt::Debug for Differentiator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Differentiator").field("scheme", &self.scheme).finish_non_exhaustive()
    }
}

impl Differentiator {
    pub fn new(grid: &PhaseGrid, scheme: Scheme) -> Self {
        let mut planner = FftPlanner::new();
        let spectral = grid
            .axes()
            .iter()
            .map(|a| {
                (scheme == Scheme::Spectral).then(|| {
                    let n = a.n;
                    let period = n as f64 * a.spacing();
                    let k = (0..n)
                        .map(|j| {
                            if 2 * j == n {
                                0.0
                            } else {
                                let m = if 2 * j < n { j as f64 } else { j as f64 - n as f64 };
                                2.0 * std::f64::consts::PI * m / period
                            }
                        })
                        .collect();
                    (planner.plan_fft_forward(n), planner.plan_fft_inverse(n), k)
                })
            })
            .collect();
        Self { grid: grid.clone(), scheme, spectral }
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Derivative along `axis` of interleaved data with `comps` complex
    /// components per grid point.
    pub fn apply(&self, data: &[C64], comps: usize, axis: usize) -> Vec<C64> {
        let n = self.grid.axes()[axis].n;
        let h = self.grid.axes()[axis].spacing();
        let stride = self.grid.stride(axis) * comps;
        let block = n * stride;
        let outer = data.len() / block;
        let lines: Vec<(usize, Vec<C64>)> = (0..outer * stride)
            .into_par_iter()
            .map_init(
                || vec![c(0.0); n],
                |buf, line| {
                    let (o, inner) = (line / stride, line % stride);
                    let base = o * block + inner;
                    for (i, b) in buf.iter_mut().enumerate() {
                        *b = data[base + i * stride];
                    }
                    (base, self.line_derivative(buf, axis, h))
                },
            )
            .collect();
        let mut out = vec![c(0.0); data.len()];
        for (base, line) in lines {
            for (i, v) in line.into_iter().enumerate() {
                out[base + i * stride] = v;
            }
        }
        out
    }

    fn line_derivative(&self, f: &[C64], axis: usize, h: f64) -> Vec<C64> {
        let n = f.len();
        match &self.spectral[axis] {
            None => {
                let mut d = vec![c(0.0); n];
                let inv = 0.5 / h;
                d[0] = (f[0] * -3.0 + f[1] * 4.0 - f[2]) * inv;
                for i in 1..n - 1 {
                    d[i] = (f[i + 1] - f[i - 1]) * inv;
                }
                d[n - 1] = (f[n - 1] * 3.0 - f[n - 2] * 4.0 + f[n - 3]) * inv;
                d
            }
            Some((fwd, inv, k)) => {
                let mut buf = f.to_vec();
                fwd.process(&mut buf);
                let scale = 1.0 / n as f64;
                for (b, &kj) in buf.iter_mut().zip(k) {
                    *b *= C64::new(0.0, kj * scale);
                }
                inv.process(&mut buf);
                buf
            }
        }
    }

    /// Damps Fourier modes near the Nyquist frequency by
    /// `exp(-FILTER_STRENGTH (k / k_max)^FILTER_ORDER)` along every axis.
    /// The zero mode is untouched, so the integral is preserved exactly.
    /// No-op for the central scheme.
    pub fn filter(&self, f: &mut MatrixField) {
        if self.scheme != Scheme::Spectral {
            return;
        }
        let comps = f.block_len();
        for axis in 0..self.grid.axes().len() {
            let Some((fwd, inv, k)) = &self.spectral[axis] else { continue };
            let kmax = k.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            let n = k.len();
            let weights: Vec<f64> = (0..n)
                .map(|j| {
                    let eta = if 2 * j == n { 1.0 } else { k[j].abs() / kmax };
                    (-FILTER_STRENGTH * eta.powi(FILTER_ORDER)).exp() / n as f64
                })
                .collect();
            let data = f.data().to_vec();
            let stride = self.grid.stride(axis) * comps;
            let block = n * stride;
            let lines: Vec<(usize, Vec<C64>)> = (0..(data.len() / block) * stride)
                .into_par_iter()
                .map(|line| {
                    let (o, inner) = (line / stride, line % stride);
                    let base = o * block + inner;
                    let mut buf: Vec<C64> = (0..n).map(|i| data[base + i * stride]).collect();
                    fwd.process(&mut buf);
                    buf.iter_mut().zip(&weights).for_each(|(b, w)| *b *= w);
                    inv.process(&mut buf);
                    (base, buf)
                })
                .collect();
            let out = f.data_mut();
            for (base, line) in lines {
                for (i, v) in line.into_iter().enumerate() {
                    out[base + i * stride] = v;
                }
            }
        }
    }

    pub fn matrix(&self, f: &MatrixField, axis: usize) -> MatrixField {
        MatrixField::from_data(f.grid().clone(), f.dim(), self.apply(f.data(), f.block_len(), axis))
            .expect("shape preserved")
    }

    pub fn scalar(&self, f: &ScalarField, axis: usize) -> ScalarField {
        let data: Vec<C64> = f.values().iter().map(|&v| c(v)).collect();
        let d = self.apply(&data, 1, axis);
        ScalarField::new(f.grid().clone(), d.into_iter().map(|z| z.re).collect()).expect("shape preserved")
    }

    /// Derivatives along every axis.
    pub fn matrix_gradient(&self, f: &MatrixField) -> Vec<MatrixField> {
        (0..self.grid.axes().len()).map(|a| self.matrix(f, a)).collect()
    }

    pub fn scalar_gradient(&self, f: &ScalarField) -> Vec<ScalarField> {
        (0..self.grid.axes().len()).map(|a| self.scalar(f, a)).collect()
    }
}

/// Argument of a Poisson bracket.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a> {
    Scalar(&'a ScalarField),
    Matrix(&'a MatrixField),
}

/// Value of a Poisson bracket.
#[derive(Clone, Debug, PartialEq)]
pub enum Bracket {
    Scalar(ScalarField),
    Matrix(MatrixField),
}

impl Bracket {
    pub fn into_scalar(self) -> Option<ScalarField> {
        match self {
            Bracket::Scalar(s) => Some(s),
            Bracket::Matrix(_) => None,
        }
    }

    pub fn into_matrix(self) -> Option<MatrixField> {
        match self {
            Bracket::Matrix(m) => Some(m),
            Bracket::Scalar(_) => None,
        }
    }
}

impl Operand<'_> {
    fn grid(&self) -> &PhaseGrid {
        match self {
            Operand::Scalar(s) => s.grid(),
            Operand::Matrix(m) => m.grid(),
        }
    }
}

/// `{A, B}` with central differences. At least one operand must be scalar.
pub fn poisson_bracket(a: Operand<'_>, b: Operand<'_>) -> Result<Bracket, StateError> {
    poisson_bracket_with(a, b, &Differentiator::new(a.grid(), Scheme::Central))
}

pub fn poisson_bracket_with(a: Operand<'_>, b: Operand<'_>, diff: &Differentiator) -> Result<Bracket, StateError> {
    if a.grid() != b.grid() || a.grid() != diff.grid() {
        return Err(StateError::ShapeMismatch("bracket operands live on different grids".into()));
    }
    let grid = a.grid();
    match (a, b) {
        (Operand::Scalar(x), Operand::Scalar(y)) => {
            let (gx, gy) = (diff.scalar_gradient(x), diff.scalar_gradient(y));
            let mut out = vec![0.0; grid.len()];
            for dof in 0..grid.dofs() {
                let (q, p) = (2 * dof, 2 * dof + 1);
                for (k, o) in out.iter_mut().enumerate() {
                    *o += gx[q].values()[k] * gy[p].values()[k] - gy[q].values()[k] * gx[p].values()[k];
                }
            }
            Ok(Bracket::Scalar(ScalarField::new(grid.clone(), out)?))
        }
        (Operand::Scalar(s), Operand::Matrix(m)) => {
            Ok(Bracket::Matrix(scalar_matrix_bracket(&diff.scalar_gradient(s), m, diff)))
        }
        (Operand::Matrix(m), Operand::Scalar(s)) => {
            let mut out = scalar_matrix_bracket(&diff.scalar_gradient(s), m, diff);
            out.scale(-1.0);
            Ok(Bracket::Matrix(out))
        }
        (Operand::Matrix(_), Operand::Matrix(_)) => Err(StateError::ShapeMismatch(
            "bracket of two operator fields needs an explicit ordering; symmetrize at the call site".into(),
        )),
    }
}

/// `{s, M}` given the gradient of the scalar `s`.
pub fn scalar_matrix_bracket(grad_s: &[ScalarField], m: &MatrixField, diff: &Differentiator) -> MatrixField {
    let gm = diff.matrix_gradient(m);
    let mut out = MatrixField::zeros(m.grid(), m.dim());
    accumulate_bracket(grad_s, &gm, 1.0, &mut out);
    out
}

/// `out += alpha * {s, M}` from precomputed gradients of both.
pub fn accumulate_bracket(grad_s: &[ScalarField], grad_m: &[MatrixField], alpha: f64, out: &mut MatrixField) {
    let n = out.block_len();
    let dofs = grad_s.len() / 2;
    out.data_mut().par_chunks_mut(n).enumerate().for_each(|(k, o)| {
        for dof in 0..dofs {
            let (q, p) = (2 * dof, 2 * dof + 1);
            let sq = grad_s[q].values()[k] * alpha;
            let sp = grad_s[p].values()[k] * alpha;
            if sq == 0.0 && sp == 0.0 {
                continue;
            }
            let (mq, mp) = (grad_m[q].block(k), grad_m[p].block(k));
            for i in 0..n {
                o[i] += mp[i] * sq - mq[i] * sp;
            }
        }
    });
}
