//! C ABI over `hybridyn`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_parse`
//! and released by the matching `*_free`. Every call returns a
//! [`HybStatus`]; on failure the message is available from
//! [`hyb_last_error`] on the same thread. Panics are caught and reported as
//! [`HybStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use hybridyn::config::{parse_with_overrides, ScenarioConfig};
use hybridyn::gravity_kernel::{fourier_mode_product, penrose_rate, site_mass_field, Lattice3};
use hybridyn::hybrid_state::QuantumDensity;
use hybridyn::linalg::{HermitianMatrix, C64};
use hybridyn::reduced_lindblad::{evolve_lindblad, KernelPreset, LindbladModel, LindbladParams};
use hybridyn::{Error, Units};
use nalgebra::DMatrix;

/// Result code of every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HybStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Malformed scenario or inconsistent arguments.
    Config = 3,
    /// Trace drift, boundary leak, instability or another numerical failure.
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

/// Complex number laid out as two doubles.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HybComplex {
    pub re: f64,
    pub im: f64,
}

/// Normalization convention of the reduced dissipator.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HybKernelPreset {
    DerivedHalf = 0,
    Dio87 = 1,
}

/// Parsed, validated scenario.
pub struct HybScenario {
    config: ScenarioConfig,
    hash: String,
}

/// Reduced quantum master equation.
pub struct HybLindblad {
    model: LindbladModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul bytes removed"));
}

struct Failure(HybStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.exit_code() {
            2 => HybStatus::Config,
            1 => HybStatus::Io,
            _ => HybStatus::Numerical,
        };
        Failure(code, e.to_string())
    }
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure(HybStatus::Config, msg.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> HybStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            HybStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside hybridyn");
            HybStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(HybStatus::NullArgument, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p).to_str().map_err(|_| Failure(HybStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn read_matrix(p: *const HybComplex, d: usize) -> DMatrix<C64> {
    let s = std::slice::from_raw_parts(p, d * d);
    DMatrix::from_fn(d, d, |i, j| C64::new(s[i * d + j].re, s[i * d + j].im))
}

unsafe fn read_hermitian(p: *const HybComplex, d: usize, name: &str) -> Result<HermitianMatrix, Failure> {
    non_null(p, name)?;
    HermitianMatrix::new(read_matrix(p, d)).map_err(|e| config_err(format!("`{name}`: {e}")))
}

fn units(hbar: f64, g: f64) -> Result<Units, Failure> {
    Units::new(hbar, g, 1.0).ok_or_else(|| config_err("hbar and G must be positive"))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn hyb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a JSON scenario and applies `n_overrides` `key.path=value`
/// strings. On success `*out` owns a new handle.
///
/// # Safety
/// `json` must be a NUL-terminated string, `overrides` an array of
/// `n_overrides` such strings (or null when zero), `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hyb_scenario_parse(
    json: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out: *mut *mut HybScenario,
) -> HybStatus {
    guard(|| {
        non_null(out, "out")?;
        let text = read_str(json, "json")?;
        let mut list = Vec::with_capacity(n_overrides);
        if n_overrides > 0 {
            non_null(overrides, "overrides")?;
            for i in 0..n_overrides {
                list.push(read_str(*overrides.add(i), "overrides[i]")?.to_string());
            }
        }
        let (config, hash) = parse_with_overrides(text, &list).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(HybScenario { config, hash }));
        Ok(())
    })
}

/// Writes the 64-character config hash and a NUL into `buf`, which must
/// hold at least 65 bytes.
///
/// # Safety
/// `scenario` must come from [`hyb_scenario_parse`]; `buf` must be writable
/// for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn hyb_scenario_hash(scenario: *const HybScenario, buf: *mut c_char, len: usize) -> HybStatus {
    guard(|| {
        non_null(scenario, "scenario")?;
        non_null(buf, "buf")?;
        let hash = &(*scenario).hash;
        if len < hash.len() + 1 {
            return Err(config_err(format!("buffer of {len} bytes, need {}", hash.len() + 1)));
        }
        std::ptr::copy_nonoverlapping(hash.as_ptr() as *const c_char, buf, hash.len());
        *buf.add(hash.len()) = 0;
        Ok(())
    })
}

/// Runs the scenario and writes its artifacts and manifest into `out_dir`.
/// `seed` is used only when `use_seed` is nonzero.
///
/// # Safety
/// `scenario` must come from [`hyb_scenario_parse`]; `out_dir` must be a
/// NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn hyb_scenario_run(
    scenario: *const HybScenario,
    out_dir: *const c_char,
    seed: u64,
    use_seed: i32,
) -> HybStatus {
    guard(|| {
        non_null(scenario, "scenario")?;
        let dir = read_str(out_dir, "out_dir")?;
        let s = &*scenario;
        hybridyn::run::run(&s.config, &s.hash, (use_seed != 0).then_some(seed), Path::new(dir))?;
        Ok(())
    })
}

/// Releases a scenario; null is ignored.
///
/// # Safety
/// `scenario` must come from [`hyb_scenario_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hyb_scenario_free(scenario: *mut HybScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Builds a reduced model from `dim x dim` row-major matrices: `hq`, `hg`,
/// `n_ops` coupling operators stored back to back, and an `n_ops x n_ops`
/// row-major kernel.
///
/// # Safety
/// All pointers must reference arrays of the stated sizes; `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn hyb_lindblad_new(
    dim: usize,
    hq: *const HybComplex,
    hg: *const HybComplex,
    n_ops: usize,
    ops: *const HybComplex,
    kernel: *const f64,
    hbar: f64,
    preset: HybKernelPreset,
    out: *mut *mut HybLindblad,
) -> HybStatus {
    guard(|| {
        non_null(out, "out")?;
        if dim == 0 {
            return Err(config_err("dimension must be positive"));
        }
        let hq = read_hermitian(hq, dim, "hq")?;
        let hg = read_hermitian(hg, dim, "hg")?;
        let mut list = Vec::with_capacity(n_ops);
        if n_ops > 0 {
            non_null(ops, "ops")?;
            non_null(kernel, "kernel")?;
        }
        for r in 0..n_ops {
            list.push(read_hermitian(ops.add(r * dim * dim), dim, "ops[r]")?);
        }
        let k = if n_ops > 0 {
            let s = std::slice::from_raw_parts(kernel, n_ops * n_ops);
            DMatrix::from_row_slice(n_ops, n_ops, s)
        } else {
            DMatrix::zeros(0, 0)
        };
        let preset = match preset {
            HybKernelPreset::DerivedHalf => KernelPreset::DerivedHalf,
            HybKernelPreset::Dio87 => KernelPreset::Dio87,
        };
        let model = LindbladModel::new(hq, hg, list, k, &units(hbar, 1.0)?, preset).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(HybLindblad { model }));
        Ok(())
    })
}

/// Integrates from `rho0` to `t_final` with step `dt` and writes the final
/// `dim x dim` state into `rho_out`.
///
/// # Safety
/// `model` must come from [`hyb_lindblad_new`]; `rho0` and `rho_out` must
/// hold `dim * dim` entries.
#[no_mangle]
pub unsafe extern "C" fn hyb_lindblad_evolve(
    model: *const HybLindblad,
    rho0: *const HybComplex,
    dt: f64,
    t_final: f64,
    rho_out: *mut HybComplex,
) -> HybStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(rho_out, "rho_out")?;
        let m = &(*model).model;
        let d = m.dim();
        let rho = QuantumDensity::new(read_hermitian(rho0, d, "rho0")?).map_err(|e| config_err(e.to_string()))?;
        let params = LindbladParams::new(dt, t_final, usize::MAX).map_err(Error::from)?;
        let traj = evolve_lindblad(m, &rho, &params).map_err(Error::from)?;
        let last = traj.last().matrix().matrix();
        let out = std::slice::from_raw_parts_mut(rho_out, d * d);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = HybComplex { re: last[(i, j)].re, im: last[(i, j)].im };
            }
        }
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`hyb_lindblad_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hyb_lindblad_free(model: *mut HybLindblad) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// `DC(k) DQ(k)` for the continuum kernels at wavevector `k[3]`.
///
/// # Safety
/// `k` must hold three doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hyb_fourier_mode_product(k: *const f64, hbar: f64, g: f64, out: *mut f64) -> HybStatus {
    guard(|| {
        non_null(k, "k")?;
        non_null(out, "out")?;
        let k = [*k, *k.add(1), *k.add(2)];
        *out = fourier_mode_product(k, &units(hbar, g)?).map_err(|e| Failure(HybStatus::Numerical, e.to_string()))?;
        Ok(())
    })
}

/// Decoherence rate between two branches that each hold mass `m` on one
/// site of an `n^3` lattice with spacing `a` and smearing `sigma`.
///
/// # Safety
/// `site_a` and `site_b` must hold three indices each; `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn hyb_penrose_rate_sites(
    n: usize,
    a: f64,
    sigma: f64,
    m: f64,
    site_a: *const usize,
    site_b: *const usize,
    hbar: f64,
    g: f64,
    out: *mut f64,
) -> HybStatus {
    guard(|| {
        non_null(site_a, "site_a")?;
        non_null(site_b, "site_b")?;
        non_null(out, "out")?;
        let lattice = Lattice3::new(n, a, sigma).map_err(|e| config_err(e.to_string()))?;
        let sa = [*site_a, *site_a.add(1), *site_a.add(2)];
        let sb = [*site_b, *site_b.add(1), *site_b.add(2)];
        let fa = site_mass_field(m, sa, &lattice).map_err(|e| config_err(e.to_string()))?;
        let fb = site_mass_field(m, sb, &lattice).map_err(|e| config_err(e.to_string()))?;
        *out = penrose_rate(&fa, &fb, &lattice, &units(hbar, g)?).map_err(|e| config_err(e.to_string()))?;
        Ok(())
    })
}
