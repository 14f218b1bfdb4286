//! Small dense complex linear algebra used throughout the crate.
//!
//! Operator-valued fields store one `d x d` block per grid point in row-major
//! order; the `block_*` helpers work directly on those flat slices.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::StateError;

pub type C64 = Complex64;

pub const I: C64 = C64::new(0.0, 1.0);

/// Relative tolerance for accepting a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// A finite-dimensional Hermitian operator.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(DMatrix<C64>);

impl HermitianMatrix {
    pub fn new(m: DMatrix<C64>) -> Result<Self, StateError> {
        if !m.is_square() {
            return Err(StateError::ShapeMismatch(format!(
                "matrix is {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let residual = hermiticity_residual(&m);
        let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
        if residual > HERMITIAN_TOL * scale {
            return Err(StateError::NonHermitian { residual });
        }
        Ok(Self(m))
    }

    /// Hermitian part of `m`, without checks.
    pub fn hermitize(m: &DMatrix<C64>) -> Self {
        Self((m + m.adjoint()) * C64::new(0.5, 0.0))
    }

    pub fn from_parts(re: &[Vec<f64>], im: &[Vec<f64>]) -> Result<Self, StateError> {
        let d = re.len();
        if im.len() != d || re.iter().chain(im).any(|row| row.len() != d) {
            return Err(StateError::ShapeMismatch("real/imag parts must be square and equal".into()));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| C64::new(re[i][j], im[i][j])))
    }

    pub fn zeros(d: usize) -> Self {
        Self(DMatrix::zeros(d, d))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let d = values.len();
        Self(DMatrix::from_fn(d, d, |i, j| if i == j { C64::new(values[i], 0.0) } else { C64::new(0.0, 0.0) }))
    }

    pub fn pauli_x() -> Self {
        Self(DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]))
    }

    pub fn pauli_y() -> Self {
        Self(DMatrix::from_row_slice(2, 2, &[c(0.0), -I, I, c(0.0)]))
    }

    pub fn pauli_z() -> Self {
        Self(DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)]))
    }

    /// Projector onto a (not necessarily normalized) vector.
    pub fn projector(v: &[C64]) -> Self {
        let norm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let d = v.len();
        Self(DMatrix::from_fn(d, d, |i, j| v[i] * v[j].conj() / norm2))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(&self.0 * C64::new(s, 0.0))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(&self.0 - &other.0)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Spectral norm.
    pub fn op_norm(&self) -> f64 {
        self.eigenvalues().iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    /// Row-major copy of the entries.
    pub fn to_block(&self) -> Vec<C64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn from_block(block: &[C64], d: usize) -> Self {
        Self::hermitize(&block_to_matrix(block, d))
    }

    /// `exp(-i * theta * self)`, unitary.
    pub fn unitary_exp(&self, theta: f64) -> DMatrix<C64> {
        let eig = self.0.clone().symmetric_eigen();
        let d = self.dim();
        let phases = DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                C64::from_polar(1.0, -theta * eig.eigenvalues[i])
            } else {
                c(0.0)
            }
        });
        &eig.eigenvectors * phases * eig.eigenvectors.adjoint()
    }
}

/// Serialized form used by configs: separate real and imaginary row lists.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub re: Vec<Vec<f64>>,
    #[serde(default)]
    pub im: Option<Vec<Vec<f64>>>,
}

impl MatrixSpec {
    pub fn from_matrix(m: &HermitianMatrix) -> Self {
        let d = m.dim();
        let re = (0..d).map(|i| (0..d).map(|j| m.0[(i, j)].re).collect()).collect();
        let im = (0..d).map(|i| (0..d).map(|j| m.0[(i, j)].im).collect()).collect();
        Self { re, im: Some(im) }
    }
}

#[inline]
pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn hermiticity_residual(m: &DMatrix<C64>) -> f64 {
    let d = m.nrows();
    let mut r: f64 = 0.0;
    for i in 0..d {
        for j in i..d {
            r = r.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    r
}

pub fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Trace distance `||a - b||_1 / 2` between two Hermitian matrices.
pub fn trace_distance(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    0.5 * hermitian_eigenvalues(&(a - b)).iter().map(|v| v.abs()).sum::<f64>()
}

pub fn block_to_matrix(block: &[C64], d: usize) -> DMatrix<C64> {
    DMatrix::from_row_slice(d, d, block)
}

pub fn matrix_to_block(m: &DMatrix<C64>) -> Vec<C64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// `out = a * b` for row-major `d x d` blocks.
#[inline]
pub fn block_mul(a: &[C64], b: &[C64], out: &mut [C64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            let mut acc = c(0.0);
            for k in 0..d {
                acc += a[i * d + k] * b[k * d + j];
            }
            out[i * d + j] = acc;
        }
    }
}

/// `out += alpha * (a * b - b * a)`.
#[inline]
pub fn block_commutator_acc(a: &[C64], b: &[C64], alpha: C64, out: &mut [C64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            let mut acc = c(0.0);
            for k in 0..d {
                acc += a[i * d + k] * b[k * d + j] - b[i * d + k] * a[k * d + j];
            }
            out[i * d + j] += alpha * acc;
        }
    }
}

/// `out += alpha * (a * b + b * a) / 2`, the Hermitian part of `a * b` for
/// Hermitian `a` and `b`.
#[inline]
pub fn block_sym_product_acc(a: &[C64], b: &[C64], alpha: f64, out: &mut [C64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            let mut acc = c(0.0);
            for k in 0..d {
                acc += a[i * d + k] * b[k * d + j] + b[i * d + k] * a[k * d + j];
            }
            out[i * d + j] += acc * (0.5 * alpha);
        }
    }
}

pub fn block_trace(a: &[C64], d: usize) -> C64 {
    (0..d).map(|i| a[i * d + i]).sum()
}

/// Smallest eigenvalue of a Hermitian block. Closed form for `d <= 2`.
pub fn block_min_eigenvalue(a: &[C64], d: usize) -> f64 {
    match d {
        1 => a[0].re,
        2 => {
            let (p, q) = (a[0].re, a[3].re);
            let off = 0.5 * (a[1] + a[2].conj());
            let mean = 0.5 * (p + q);
            let half = 0.5 * (p - q);
            mean - (half * half + off.norm_sqr()).sqrt()
        }
        _ => hermitian_eigenvalues(&HermitianMatrix::hermitize(&block_to_matrix(a, d)).0)[0],
    }
}

/// Largest `|a_ij - conj(a_ji)|` of a block.
pub fn block_hermiticity_residual(a: &[C64], d: usize) -> f64 {
    let mut r: f64 = 0.0;
    for i in 0..d {
        for j in i..d {
            r = r.max((a[i * d + j] - a[j * d + i].conj()).norm());
        }
    }
    r
}

pub fn block_frobenius(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Precomputed action of `sum_rs K_rs [f_r, [f_s, X]]` for a fixed list of
/// Hermitian operators `f_r` and a symmetric kernel `K`.
///
/// Stores `F2 = sum_rs K_rs f_r f_s` and the sandwich tensor
/// `T_ijkl = sum_rs K_rs (f_r)_ij (f_s)_kl`, so applying it costs `O(d^4)`
/// regardless of how many operators went in.
#[derive(Clone, Debug)]
pub struct DoubleCommutator {
    dim: usize,
    f2: Vec<C64>,
    tensor: Vec<C64>,
}

impl DoubleCommutator {
    /// `ops[r]` are row-major blocks; `kernel(r, s)` must be symmetric.
    /// Cost `O(n^2 d^2 + n d^4)`.
    pub fn new(ops: &[Vec<C64>], kernel: impl Fn(usize, usize) -> f64 + Sync, d: usize) -> Self {
        use rayon::prelude::*;
        let n = ops.len();
        let dd = d * d;
        // g_s = sum_r K_rs f_r
        let g: Vec<Vec<C64>> = (0..n)
            .into_par_iter()
            .map(|s| {
                let mut acc = vec![c(0.0); dd];
                for (r, op) in ops.iter().enumerate() {
                    let k = kernel(r, s);
                    if k != 0.0 {
                        for (a, b) in acc.iter_mut().zip(op) {
                            *a += b * k;
                        }
                    }
                }
                acc
            })
            .collect();
        let mut tensor = vec![c(0.0); dd * dd];
        for s in 0..n {
            for ij in 0..dd {
                let gij = g[s][ij];
                if gij == c(0.0) {
                    continue;
                }
                for kl in 0..dd {
                    tensor[ij * dd + kl] += gij * ops[s][kl];
                }
            }
        }
        Self::from_tensor(tensor, d)
    }

    fn from_tensor(tensor: Vec<C64>, d: usize) -> Self {
        let dd = d * d;
        let mut f2 = vec![c(0.0); dd];
        for i in 0..d {
            for l in 0..d {
                let mut acc = c(0.0);
                for j in 0..d {
                    acc += tensor[(i * d + j) * dd + j * d + l];
                }
                f2[i * d + l] = acc;
            }
        }
        Self { dim: d, f2, tensor }
    }

    /// Same operator with every kernel entry multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            f2: self.f2.iter().map(|z| z * s).collect(),
            tensor: self.tensor.iter().map(|z| z * s).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `out += alpha * sum_rs K_rs [f_r, [f_s, x]]`.
    #[inline]
    pub fn apply_acc(&self, x: &[C64], alpha: f64, out: &mut [C64]) {
        let d = self.dim;
        let dd = d * d;
        for i in 0..d {
            for l in 0..d {
                let mut acc = c(0.0);
                for j in 0..d {
                    acc += self.f2[i * d + j] * x[j * d + l] + x[i * d + j] * self.f2[j * d + l];
                }
                let row = &self.tensor[i * d * dd..];
                let mut sand = c(0.0);
                for j in 0..d {
                    let t = &row[j * dd..];
                    for k in 0..d {
                        sand += t[k * d + l] * x[j * d + k];
                    }
                }
                out[i * d + l] += (acc - sand * 2.0) * alpha;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensor.iter().all(|z| *z == c(0.0))
    }
}
