//! Static lattice constructions for Newtonian gravity: the regularized
//! Coulomb kernel, the decoherence and diffusion kernels, mass densities and
//! the rates and energies built from them.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::KernelError;
use crate::linalg::{block_mul, c, HermitianMatrix, C64};
use crate::units::Units;

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Cubic lattice of `n^3` sites with spacing `a`, centred on the origin,
/// and the smearing width `sigma` of the Coulomb kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice3 {
    pub n: usize,
    pub a: f64,
    pub sigma: f64,
}

impl Lattice3 {
    pub fn new(n: usize, a: f64, sigma: f64) -> Result<Self, KernelError> {
        let l = Self { n, a, sigma };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.n < 4 {
            return Err(KernelError::InvalidLattice(format!("n = {} < 4", self.n)));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(KernelError::InvalidLattice(format!("spacing a = {}", self.a)));
        }
        if !(self.sigma >= 0.5 * self.a && self.sigma.is_finite()) {
            return Err(KernelError::InvalidLattice(format!(
                "sigma = {} is below half the spacing {}",
                self.sigma, self.a
            )));
        }
        Ok(())
    }

    pub fn sites(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn cell_volume(&self) -> f64 {
        self.a * self.a * self.a
    }

    /// Coordinate of index `i` along any axis.
    pub fn coord(&self, i: usize) -> f64 {
        self.a * (i as f64 - 0.5 * (self.n - 1) as f64)
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        (ijk[0] * self.n + ijk[1]) * self.n + ijk[2]
    }

    pub fn triple(&self, site: usize) -> [usize; 3] {
        [site / (self.n * self.n), (site / self.n) % self.n, site % self.n]
    }

    pub fn position(&self, site: usize) -> [f64; 3] {
        let t = self.triple(site);
        [self.coord(t[0]), self.coord(t[1]), self.coord(t[2])]
    }

    /// Largest coordinate magnitude of a site.
    pub fn half_extent(&self) -> f64 {
        0.5 * self.a * (self.n - 1) as f64
    }

    pub fn same_as(&self, other: &Self) -> Result<(), KernelError> {
        if self != other {
            return Err(KernelError::LatticeMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

fn distance(r: [f64; 3], s: [f64; 3]) -> f64 {
    ((r[0] - s[0]).powi(2) + (r[1] - s[1]).powi(2) + (r[2] - s[2]).powi(2)).sqrt()
}

/// `erf(d / 2 sigma) / d`, and its limit `1 / (sigma sqrt(pi))` at `d = 0`.
/// This is the interaction energy of two unit Gaussians of width `sigma`.
pub fn regularized_coulomb(r: [f64; 3], s: [f64; 3], sigma: f64) -> f64 {
    coulomb_of_distance(distance(r, s), sigma)
}

pub fn coulomb_of_distance(d: f64, sigma: f64) -> f64 {
    let x = d / (2.0 * sigma);
    if x < 1e-4 {
        // erf(x)/x = 2/sqrt(pi) (1 - x^2/3 + x^4/10)
        (1.0 - x * x / 3.0 + x.powi(4) / 10.0) / (sigma * SQRT_PI)
    } else {
        libm::erf(x) / d
    }
}

/// Kernel value between two sites, which depends only on the index offset.
fn site_kernel(lattice: &Lattice3, r: usize, s: usize) -> f64 {
    let (a, b) = (lattice.triple(r), lattice.triple(s));
    let d2: f64 = (0..3).map(|k| ((a[k] as f64 - b[k] as f64) * lattice.a).powi(2)).sum();
    coulomb_of_distance(d2.sqrt(), lattice.sigma)
}

/// Table of the kernel by absolute index offset, shared by all site pairs.
fn offset_table(lattice: &Lattice3) -> Vec<f64> {
    let n = lattice.n;
    let mut t = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let d = lattice.a * ((i * i + j * j + k * k) as f64).sqrt();
                t[(i * n + j) * n + k] = coulomb_of_distance(d, lattice.sigma);
            }
        }
    }
    t
}

/// `sum_s K(r, s) v(s)` for every site `r`, using the offset table.
fn kernel_apply(lattice: &Lattice3, table: &[f64], v: &[f64]) -> Vec<f64> {
    let n = lattice.n;
    (0..lattice.sites())
        .into_par_iter()
        .map(|r| {
            let a = lattice.triple(r);
            let mut acc = 0.0;
            for (s, &vs) in v.iter().enumerate() {
                if vs != 0.0 {
                    let b = lattice.triple(s);
                    let off = (a[0].abs_diff(b[0]) * n + a[1].abs_diff(b[1])) * n + a[2].abs_diff(b[2]);
                    acc += table[off] * vs;
                }
            }
            acc
        })
        .collect()
}

/// `sum_rs u(r) K(r, s) v(s)` without forming the kernel matrix.
pub fn coulomb_quadratic_form(lattice: &Lattice3, u: &[f64], v: &[f64]) -> f64 {
    let table = offset_table(lattice);
    kernel_apply(lattice, &table, v).iter().zip(u).map(|(a, b)| a * b).sum()
}

/// Mass per unit volume at every site.
#[derive(Clone, Debug, PartialEq)]
pub struct MassDensityField {
    lattice: Lattice3,
    values: Vec<f64>,
}

impl MassDensityField {
    pub fn new(lattice: Lattice3, values: Vec<f64>) -> Result<Self, KernelError> {
        if values.len() != lattice.sites() {
            return Err(KernelError::ShapeMismatch(format!("{} values for {} sites", values.len(), lattice.sites())));
        }
        Ok(Self { lattice, values })
    }

    pub fn zeros(lattice: &Lattice3) -> Self {
        Self { lattice: *lattice, values: vec![0.0; lattice.sites()] }
    }

    pub fn lattice(&self) -> &Lattice3 {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.lattice.cell_volume()
    }

    pub fn add(&self, other: &Self) -> Result<Self, KernelError> {
        self.lattice.same_as(&other.lattice)?;
        Ok(Self { lattice: self.lattice, values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect() })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, KernelError> {
        self.lattice.same_as(&other.lattice)?;
        Ok(Self { lattice: self.lattice, values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect() })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { lattice: self.lattice, values: self.values.iter().map(|v| v * s).collect() }
    }

    /// Mass-weighted mean position.
    pub fn center_of_mass(&self) -> [f64; 3] {
        let m: f64 = self.values.iter().sum();
        let mut c = [0.0; 3];
        for (site, v) in self.values.iter().enumerate() {
            let x = self.lattice.position(site);
            for k in 0..3 {
                c[k] += v * x[k] / m;
            }
        }
        c
    }

    /// Mass-weighted variance along each axis.
    pub fn second_moments(&self) -> [f64; 3] {
        let m: f64 = self.values.iter().sum();
        let c0 = self.center_of_mass();
        let mut out = [0.0; 3];
        for (site, v) in self.values.iter().enumerate() {
            let x = self.lattice.position(site);
            for k in 0..3 {
                out[k] += v * (x[k] - c0[k]).powi(2) / m;
            }
        }
        out
    }

    /// Rows `i,j,k,value`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "i,j,k,value")?;
        for (site, v) in self.values.iter().enumerate() {
            let t = self.lattice.triple(site);
            writeln!(out, "{},{},{},{:.15e}", t[0], t[1], t[2], v)?;
        }
        Ok(())
    }
}

/// Gaussian of width `sigma` carrying mass `m`, renormalized so that the
/// lattice sum reproduces `m` exactly.
pub fn point_mass_field(m: f64, center: [f64; 3], lattice: &Lattice3) -> Result<MassDensityField, KernelError> {
    lattice.validate()?;
    let margin = lattice.half_extent() - 3.0 * lattice.sigma;
    if center.iter().any(|x| !x.is_finite() || x.abs() > margin) {
        return Err(KernelError::OutOfLattice { center });
    }
    let s2 = lattice.sigma * lattice.sigma;
    let raw: Vec<f64> = (0..lattice.sites())
        .map(|site| {
            let x = lattice.position(site);
            let r2: f64 = (0..3).map(|k| (x[k] - center[k]).powi(2)).sum();
            (-0.5 * r2 / s2).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum::<f64>() * lattice.cell_volume();
    MassDensityField::new(*lattice, raw.into_iter().map(|v| v * m / total).collect())
}

/// Mass `m` concentrated on a single site, `m / a^3` there and zero
/// elsewhere. Its pair energies with the regularized kernel are exactly the
/// smeared closed forms.
pub fn site_mass_field(m: f64, site: [usize; 3], lattice: &Lattice3) -> Result<MassDensityField, KernelError> {
    lattice.validate()?;
    if site.iter().any(|&i| i >= lattice.n) {
        let center = [site[0] as f64 * lattice.a, site[1] as f64 * lattice.a, site[2] as f64 * lattice.a];
        return Err(KernelError::OutOfLattice { center });
    }
    let mut f = MassDensityField::zeros(lattice);
    f.values[lattice.index(site)] = m / lattice.cell_volume();
    Ok(f)
}

/// Hermitian operator per site.
#[derive(Clone, Debug, PartialEq)]
pub struct MassOperatorField {
    lattice: Lattice3,
    dim: usize,
    blocks: Vec<Vec<C64>>,
}

impl MassOperatorField {
    pub fn new(lattice: Lattice3, ops: Vec<HermitianMatrix>) -> Result<Self, KernelError> {
        if ops.len() != lattice.sites() {
            return Err(KernelError::ShapeMismatch(format!("{} operators for {} sites", ops.len(), lattice.sites())));
        }
        let dim = ops.first().map_or(1, HermitianMatrix::dim);
        if ops.iter().any(|o| o.dim() != dim) {
            return Err(KernelError::ShapeMismatch("operators differ in dimension".into()));
        }
        Ok(Self { lattice, dim, blocks: ops.iter().map(HermitianMatrix::to_block).collect() })
    }

    /// Configuration-diagonal operator: branch `k` of the quantum basis
    /// carries the mass distribution `branches[k]`.
    pub fn from_branches(branches: &[MassDensityField]) -> Result<Self, KernelError> {
        let first = branches.first().ok_or_else(|| KernelError::ShapeMismatch("no branches".into()))?;
        let lattice = *first.lattice();
        for b in branches {
            lattice.same_as(b.lattice())?;
        }
        let d = branches.len();
        let blocks = (0..lattice.sites())
            .map(|site| {
                let mut b = vec![c(0.0); d * d];
                for (k, br) in branches.iter().enumerate() {
                    b[k * d + k] = c(br.values[site]);
                }
                b
            })
            .collect();
        Ok(Self { lattice, dim: d, blocks })
    }

    pub fn lattice(&self) -> &Lattice3 {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Vec<C64>] {
        &self.blocks
    }

    /// Diagonal entries as mass fields, when the operator is diagonal.
    pub fn branches(&self) -> Option<Vec<MassDensityField>> {
        let d = self.dim;
        let diagonal = self
            .blocks
            .iter()
            .all(|b| (0..d).all(|i| (0..d).all(|j| i == j || b[i * d + j] == c(0.0))));
        diagonal.then(|| {
            (0..d)
                .map(|k| MassDensityField {
                    lattice: self.lattice,
                    values: self.blocks.iter().map(|b| b[k * d + k].re).collect(),
                })
                .collect()
        })
    }
}

/// Which kernel a matrix holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelLabel {
    #[serde(rename = "DC")]
    Dc,
    #[serde(rename = "DQ")]
    Dq,
}

/// Symmetric kernel over lattice site pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    pub label: KernelLabel,
    pub lattice: Lattice3,
    pub matrix: DMatrix<f64>,
}

impl KernelMatrix {
    pub fn get(&self, r: usize, s: usize) -> f64 {
        self.matrix[(r, s)]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix.clone().symmetric_eigenvalues().min()
    }

    pub fn norm(&self) -> f64 {
        self.matrix.clone().symmetric_eigenvalues().iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// `u^T K v`.
    pub fn quadratic_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = u.len();
        (0..n).into_par_iter().map(|r| u[r] * (0..n).map(|s| self.matrix[(r, s)] * v[s]).sum::<f64>()).sum()
    }

    /// Rows `i1,j1,k1,i2,j2,k2,value`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "i1,j1,k1,i2,j2,k2,value")?;
        for r in 0..self.matrix.nrows() {
            let a = self.lattice.triple(r);
            for s in 0..self.matrix.ncols() {
                let b = self.lattice.triple(s);
                writeln!(out, "{},{},{},{},{},{},{:.15e}", a[0], a[1], a[2], b[0], b[1], b[2], self.matrix[(r, s)])?;
            }
        }
        Ok(())
    }
}

/// `DC(r, s) = (G hbar / 2) erf(|r - s| / 2 sigma) / |r - s|`.
pub fn build_dc(lattice: &Lattice3, units: &Units) -> Result<KernelMatrix, KernelError> {
    lattice.validate()?;
    let coeff = 0.5 * units.g * units.hbar;
    let table = offset_table(lattice);
    let n = lattice.n;
    let sites = lattice.sites();
    let mut m = DMatrix::zeros(sites, sites);
    for r in 0..sites {
        let a = lattice.triple(r);
        for s in 0..sites {
            let b = lattice.triple(s);
            let off = (a[0].abs_diff(b[0]) * n + a[1].abs_diff(b[1])) * n + a[2].abs_diff(b[2]);
            m[(r, s)] = coeff * table[off];
        }
    }
    Ok(KernelMatrix { label: KernelLabel::Dc, lattice: *lattice, matrix: m })
}

/// Seven-point Laplacian with zero values outside the lattice.
pub fn lattice_laplacian(lattice: &Lattice3, v: &[f64]) -> Vec<f64> {
    let n = lattice.n as isize;
    let inv = 1.0 / (lattice.a * lattice.a);
    (0..lattice.sites())
        .map(|site| {
            let t = lattice.triple(site);
            let mut acc = -6.0 * v[site];
            for axis in 0..3 {
                for step in [-1isize, 1] {
                    let j = t[axis] as isize + step;
                    if (0..n).contains(&j) {
                        let mut u = t;
                        u[axis] = j as usize;
                        acc += v[lattice.index(u)];
                    }
                }
            }
            acc * inv
        })
        .collect()
}

/// `DQ = (4 pi G)^-2 Lap Lap' DC`, the Laplacian acting on each index.
pub fn build_dq_from_dc(dc: &KernelMatrix, lattice: &Lattice3, units: &Units) -> Result<KernelMatrix, KernelError> {
    dc.lattice.same_as(lattice)?;
    if dc.label != KernelLabel::Dc {
        return Err(KernelError::LatticeMismatch("expected a DC kernel".into()));
    }
    let sites = lattice.sites();
    let scale = (4.0 * std::f64::consts::PI * units.g).powi(-2);
    // columns of Lap * DC, then rows of (Lap * DC) * Lap
    let left: Vec<Vec<f64>> = (0..sites)
        .into_par_iter()
        .map(|s| lattice_laplacian(lattice, dc.matrix.column(s).as_slice()))
        .collect();
    let rows: Vec<Vec<f64>> = (0..sites)
        .into_par_iter()
        .map(|r| {
            let row: Vec<f64> = (0..sites).map(|s| left[s][r]).collect();
            lattice_laplacian(lattice, &row)
        })
        .collect();
    let mut m = DMatrix::from_fn(sites, sites, |r, s| rows[r][s] * scale);
    let mt = m.transpose();
    m = (&m + mt) * 0.5;
    Ok(KernelMatrix { label: KernelLabel::Dq, lattice: *lattice, matrix: m })
}

/// Product of the continuum transforms `DC(k) = 2 pi G hbar / k^2` and
/// `DQ(k) = hbar k^2 / (8 pi G)`.
pub fn fourier_mode_product(k: [f64; 3], units: &Units) -> Result<f64, KernelError> {
    let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
    if k2 == 0.0 || !k2.is_finite() {
        return Err(KernelError::ZeroMode);
    }
    let pi = std::f64::consts::PI;
    let dc = 2.0 * pi * units.g * units.hbar / k2;
    let dq = units.hbar * k2 / (8.0 * pi * units.g);
    Ok(dc * dq)
}

/// Continuum value of `DQ` quadratic forms of the smeared kernel for a
/// unit-amplitude Gaussian test field `exp(-r^2 / 2 w^2)`.
pub fn gaussian_dq_form(width: f64, sigma: f64, units: &Units) -> f64 {
    let pi = std::f64::consts::PI;
    let big = (width * width + sigma * sigma).sqrt();
    units.hbar / (8.0 * pi * units.g) * 1.5 * pi.powf(1.5) * width.powi(6) / big.powi(5)
}

/// `a^6 (Lap u)^T DC (Lap u) / (4 pi G)^2`, the discrete `DQ` quadratic form,
/// evaluated without assembling the kernel.
pub fn discrete_dq_form(lattice: &Lattice3, u: &[f64], units: &Units) -> f64 {
    let lu = lattice_laplacian(lattice, u);
    let coeff = 0.5 * units.g * units.hbar;
    let scale = (4.0 * std::f64::consts::PI * units.g).powi(-2);
    coulomb_quadratic_form(lattice, &lu, &lu) * coeff * scale * lattice.cell_volume().powi(2)
}

fn check_pair(f: &MassDensityField, fp: &MassDensityField) -> Result<Vec<f64>, KernelError> {
    Ok(f.sub(fp)?.values)
}

/// `(G / 4 hbar) sum_rs df(r) df(s) K(r, s) a^6` with `df = f - f'`.
pub fn penrose_rate(
    f: &MassDensityField,
    fprime: &MassDensityField,
    lattice: &Lattice3,
    units: &Units,
) -> Result<f64, KernelError> {
    f.lattice.same_as(lattice)?;
    let df = check_pair(f, fprime)?;
    let q = coulomb_quadratic_form(lattice, &df, &df);
    Ok(0.25 * units.g / units.hbar * q * lattice.cell_volume().powi(2))
}

/// `(1 / 2 hbar^2) df^T DC df a^6`.
pub fn decoherence_rate_from_kernel(
    f: &MassDensityField,
    fprime: &MassDensityField,
    dc: &KernelMatrix,
    units: &Units,
) -> Result<f64, KernelError> {
    f.lattice.same_as(&dc.lattice)?;
    let df = check_pair(f, fprime)?;
    let q = dc.quadratic_form(&df, &df);
    Ok(0.5 / (units.hbar * units.hbar) * q * dc.lattice.cell_volume().powi(2))
}

/// `-(G / 2) sum_rs f(r) f(s) K(r, s) a^6`, a `d x d` Hermitian matrix.
pub fn newton_pair_potential(fhat: &MassOperatorField, lattice: &Lattice3, units: &Units) -> Result<HermitianMatrix, KernelError> {
    fhat.lattice.same_as(lattice)?;
    let d = fhat.dim;
    let dd = d * d;
    let table = offset_table(lattice);
    // g(r) = sum_s K(r, s) f(s), componentwise
    let mut g = vec![vec![c(0.0); dd]; lattice.sites()];
    for comp in 0..dd {
        let (re, im): (Vec<f64>, Vec<f64>) = fhat.blocks.iter().map(|b| (b[comp].re, b[comp].im)).unzip();
        let gre = kernel_apply(lattice, &table, &re);
        let gim = kernel_apply(lattice, &table, &im);
        for (site, gs) in g.iter_mut().enumerate() {
            gs[comp] = C64::new(gre[site], gim[site]);
        }
    }
    let mut acc = vec![c(0.0); dd];
    let mut prod = vec![c(0.0); dd];
    for (f, gs) in fhat.blocks.iter().zip(&g) {
        block_mul(f, gs, &mut prod, d);
        acc.iter_mut().zip(&prod).for_each(|(a, p)| *a += p);
    }
    let scale = -0.5 * units.g * lattice.cell_volume().powi(2);
    Ok(HermitianMatrix::from_block(&acc.iter().map(|z| z * scale).collect::<Vec<_>>(), d))
}

/// Row-major blocks of `f(r)`, one per site, for building dissipators.
pub fn operator_blocks(fhat: &MassOperatorField) -> &[Vec<C64>] {
    &fhat.blocks
}

/// Kernel entry between two sites of `lattice` times `G hbar / 2`.
pub fn dc_entry(lattice: &Lattice3, units: &Units, r: usize, s: usize) -> f64 {
    0.5 * units.g * units.hbar * site_kernel(lattice, r, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coincidence_limit_is_continuous() {
        let s = 0.7;
        let near = coulomb_of_distance(1e-9, s);
        assert!((near - 1.0 / (s * SQRT_PI)).abs() < 1e-12);
        let series = coulomb_of_distance(1.39e-4 * s, s);
        let direct = libm::erf(1.39e-4 / 2.0) / (1.39e-4 * s);
        assert!((series - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn laplacian_of_quadratic_is_constant_in_the_interior() {
        let l = Lattice3::new(6, 0.5, 0.5).unwrap();
        let v: Vec<f64> = (0..l.sites())
            .map(|s| {
                let x = l.position(s);
                x[0] * x[0] + 2.0 * x[1] * x[1] - x[2] * x[2]
            })
            .collect();
        let lv = lattice_laplacian(&l, &v);
        let t = l.index([2, 3, 2]);
        assert!((lv[t] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn site_indices_round_trip() {
        let l = Lattice3::new(5, 1.0, 1.0).unwrap();
        for s in 0..l.sites() {
            assert_eq!(l.index(l.triple(s)), s);
        }
        assert_eq!(l.position(l.index([2, 2, 2])), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn out_of_lattice_point_mass_is_rejected() {
        let l = Lattice3::new(8, 1.0, 1.0).unwrap();
        assert!(matches!(point_mass_field(1.0, [0.6, 0.0, 0.0], &l), Err(KernelError::OutOfLattice { .. })));
        assert!(point_mass_field(1.0, [0.5, 0.0, 0.0], &l).is_ok());
    }
}
