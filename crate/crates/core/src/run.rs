//! Run orchestration: dispatch on the scenario mode, collect artifacts in
//! memory, then write them together with a hashed manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::checks::run_suite;
use crate::config::{hex, Mode, ScenarioConfig};
use crate::error::{ConfigError, Error, Result};
use crate::evolution::{evolve, positivity_condition_check, unravel_ensemble, Evolution, Generator, TrajectoryEnsemble};
use crate::gravity_kernel::{
    build_dc, build_dq_from_dc, decoherence_rate_from_kernel, fourier_mode_product, newton_pair_potential,
    penrose_rate, MassOperatorField,
};
use crate::hybrid_state::quantum_marginal;
use crate::linalg::{HermitianMatrix, MatrixSpec};
use crate::nonrel_limit::{c_scan, ScanTemplate};
use crate::reduced_lindblad::{
    build_model_with_kernel, evolve_lindblad, rate_report, LindbladModel, LindbladParams, QuantumTrajectory,
};

/// Environment variable that takes precedence over `--out`.
pub const OUT_ENV: &str = "HYBRIDYN_OUT";

/// Extreme values of the runtime monitors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MonitorSummary {
    pub max_trace_error: f64,
    pub min_spectrum: f64,
    pub max_boundary_ratio: f64,
    pub max_hermiticity_residual: f64,
}

impl MonitorSummary {
    fn of(ev: &Evolution) -> Self {
        Self {
            max_trace_error: ev.log.max_trace_error(),
            min_spectrum: ev.log.min_spectrum(),
            max_boundary_ratio: ev.log.max_boundary_mass(),
            max_hermiticity_residual: ev.max_hermiticity_residual,
        }
    }

    fn of_quantum(traj: &QuantumTrajectory) -> Self {
        Self {
            max_trace_error: traj.max_trace_error,
            min_spectrum: traj.min_eigenvalue,
            max_boundary_ratio: 0.0,
            max_hermiticity_residual: traj.max_hermiticity_residual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Provenance of one invocation. Written to `run.json`; the only output
/// that carries wall-clock times.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub mode: Mode,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub monitors: Option<MonitorSummary>,
    pub manifest: Vec<ManifestEntry>,
}

/// Artifacts of a run before they are written.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    pub monitors: Option<MonitorSummary>,
    /// Failed check names; the files are still written.
    pub failure: Option<String>,
}

impl Artifacts {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut text = serde_json::to_vec_pretty(value).expect("reports serialize");
        text.push(b'\n');
        self.add(name, text);
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }
}

/// Resolved output directory: `HYBRIDYN_OUT`, then `--out`, then `./out`.
pub fn output_dir(cli: Option<&Path>) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cli.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out")),
    }
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Runs the scenario, writes every artifact plus `manifest.json` and
/// `run.json` into `out`.
pub fn run(cfg: &ScenarioConfig, hash: &str, seed: Option<u64>, out: &Path) -> Result<RunRecord> {
    let started_unix = now();
    let seed = seed.or(cfg.run.seed);
    let artifacts = execute(cfg, seed)?;
    fs::create_dir_all(out)?;
    let mut manifest = Vec::new();
    for (name, bytes) in &artifacts.files {
        fs::write(out.join(name), bytes)?;
        manifest.push(ManifestEntry { file: name.clone(), sha256: hex(&Sha256::digest(bytes)), bytes: bytes.len() });
    }
    let mut text = serde_json::to_vec_pretty(&json!({ "config_hash": hash, "seed": seed, "files": manifest }))
        .expect("manifest serializes");
    text.push(b'\n');
    fs::write(out.join("manifest.json"), text)?;
    let record = RunRecord {
        mode: cfg.run.mode,
        config_hash: hash.into(),
        seed,
        started_unix,
        finished_unix: now(),
        monitors: artifacts.monitors,
        manifest,
    };
    fs::write(out.join("run.json"), serde_json::to_vec_pretty(&record).expect("record serializes"))?;
    match artifacts.failure {
        Some(names) => Err(Error::CheckFailed(names)),
        None => Ok(record),
    }
}

/// Computes the artifacts of one run without touching the filesystem.
pub fn execute(cfg: &ScenarioConfig, seed: Option<u64>) -> Result<Artifacts> {
    let mut art = Artifacts::default();
    match cfg.run.mode {
        Mode::Simulate => simulate(cfg, &mut art)?,
        Mode::Unravel => unravel(cfg, seed, &mut art)?,
        Mode::SimulateLindblad => simulate_lindblad(cfg, &mut art)?,
        Mode::Kernels => kernels(cfg, &mut art)?,
        Mode::Rates => rates(cfg, &mut art)?,
        Mode::LimitScan => limit_scan(cfg, &mut art)?,
        Mode::Check => {
            let report = run_suite(cfg.units);
            art.json("checks.json", &report);
            if !report.passed {
                let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                art.failure = Some(failed.join(", "));
            }
        }
    }
    Ok(art)
}

fn csv(write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    write(&mut buf).expect("writing to memory cannot fail");
    buf
}

fn matrix_json(m: &HermitianMatrix) -> MatrixSpec {
    MatrixSpec::from_matrix(m)
}

fn write_evolution(ev: &Evolution, art: &mut Artifacts, extra: serde_json::Value) {
    art.add("states.csv", csv(|b| ev.write_states_csv(b)));
    art.add("monitors.csv", csv(|b| ev.log.write_csv(b)));
    let monitors = MonitorSummary::of(ev);
    let marginal = quantum_marginal(ev.last());
    art.json(
        "summary.json",
        &json!({
            "t_final": ev.times.last(),
            "records": ev.times.len(),
            "monitors": monitors,
            "final_quantum_marginal": matrix_json(marginal.matrix()),
            "details": extra,
        }),
    );
    art.monitors = Some(monitors);
}

fn simulate(cfg: &ScenarioConfig, art: &mut Artifacts) -> Result<()> {
    let h = cfg.hamiltonian()?;
    let rho0 = cfg.initial_state()?;
    let noise = cfg.noise()?;
    let params = cfg.integrator()?;
    let advisory = params.advisory(&Generator::master(&h, &noise, &cfg.units, params.scheme)?);
    let ev = evolve(&h, &rho0, &noise, &cfg.units, &params)?;
    let positivity = positivity_condition_check(&noise, &cfg.units);
    write_evolution(
        &ev,
        art,
        json!({ "positivity_condition": { "holds": positivity.holds, "margin": positivity.margin }, "advisory": advisory }),
    );
    Ok(())
}

fn unravel(cfg: &ScenarioConfig, seed: Option<u64>, art: &mut Artifacts) -> Result<()> {
    let h = cfg.hamiltonian()?;
    let rho0 = cfg.initial_state()?;
    let noise = cfg.noise()?;
    let params = cfg.integrator()?;
    let n_traj = cfg.run.n_traj.unwrap_or(0);
    let ev = unravel_ensemble(&h, &rho0, &noise, &cfg.units, &params, &TrajectoryEnsemble { n_traj, seed })?;
    write_evolution(&ev, art, json!({ "n_traj": n_traj, "seed": seed }));
    Ok(())
}

fn lindblad_params(cfg: &ScenarioConfig) -> Result<LindbladParams> {
    let p = cfg.integrator()?;
    Ok(LindbladParams::new(p.dt, p.t_final, p.record_every)?)
}

fn lattice_model(cfg: &ScenarioConfig) -> Result<(MassOperatorField, crate::gravity_kernel::KernelMatrix, LindbladModel)> {
    let lattice = cfg.lattice()?;
    let fhat = MassOperatorField::from_branches(&cfg.branches()?)?;
    let dc = build_dc(&lattice, &cfg.units)?;
    let model = build_model_with_kernel(cfg.hq()?, &fhat, &dc, &cfg.units, cfg.coupling.kernel_preset)?;
    Ok((fhat, dc, model))
}

fn simulate_lindblad(cfg: &ScenarioConfig, art: &mut Artifacts) -> Result<()> {
    let model = if cfg.classical.lattice.is_some() {
        lattice_model(cfg)?.2
    } else {
        let ops = cfg
            .coupling
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| cfg.matrix(&p.op, &format!("coupling.pairs[{i}].op")))
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let kernel = cfg.noise()?.dc().clone();
        let d = cfg.quantum.dim;
        LindbladModel::new(cfg.hq()?, HermitianMatrix::zeros(d), ops, kernel, &cfg.units, cfg.coupling.kernel_preset)?
    };
    let traj = evolve_lindblad(&model, &cfg.initial_quantum()?, &lindblad_params(cfg)?)?;
    art.add("trajectory.csv", csv(|b| traj.write_csv(b)));
    let monitors = MonitorSummary::of_quantum(&traj);
    art.json(
        "summary.json",
        &json!({
            "monitors": monitors,
            "hg": matrix_json(model.hg()),
            "final_state": matrix_json(traj.last().matrix()),
        }),
    );
    art.monitors = Some(monitors);
    Ok(())
}

fn kernels(cfg: &ScenarioConfig, art: &mut Artifacts) -> Result<()> {
    let lattice = cfg.lattice()?;
    let dc = build_dc(&lattice, &cfg.units)?;
    let dq = build_dq_from_dc(&dc, &lattice, &cfg.units)?;
    art.add("dc.csv", csv(|b| dc.write_csv(b)));
    art.add("dq.csv", csv(|b| dq.write_csv(b)));
    // Lowest lattice modes along each axis and the diagonal.
    let k0 = std::f64::consts::PI / (lattice.n as f64 * lattice.a);
    let wavevectors = [[k0, 0.0, 0.0], [0.0, k0, 0.0], [0.0, 0.0, k0], [k0, k0, k0]];
    let products = wavevectors
        .iter()
        .map(|k| fourier_mode_product(*k, &cfg.units).map(|p| json!({ "k": k, "product": p })))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    art.json(
        "kernels.json",
        &json!({
            "lattice": lattice,
            "dc": { "min_eigenvalue": dc.min_eigenvalue(), "norm": dc.norm() },
            "dq": { "min_eigenvalue": dq.min_eigenvalue(), "norm": dq.norm() },
            "saturation_bound": cfg.units.positivity_bound(),
            "fourier_mode_products": products,
        }),
    );
    Ok(())
}

fn rates(cfg: &ScenarioConfig, art: &mut Artifacts) -> Result<()> {
    let lattice = cfg.lattice()?;
    let branches = cfg.branches()?;
    let (fhat, dc, model) = lattice_model(cfg)?;
    let hg = newton_pair_potential(&fhat, &lattice, &cfg.units)?;
    let d = branches.len();
    let mut pairs = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            pairs.push(json!({
                "pair": [i, j],
                "penrose_rate": penrose_rate(&branches[i], &branches[j], &lattice, &cfg.units)?,
                "kernel_rate": cfg.coupling.kernel_preset.factor()
                    * decoherence_rate_from_kernel(&branches[i], &branches[j], &dc, &cfg.units)?,
            }));
        }
    }
    let mut fits = Vec::new();
    if cfg.integrator.is_some() {
        let traj = evolve_lindblad(&model, &cfg.initial_quantum()?, &lindblad_params(cfg)?)?;
        for i in 0..d {
            for j in i + 1..d {
                if let Ok(r) = rate_report(&traj, &fhat, &dc, &cfg.units, cfg.coupling.kernel_preset, [i, j]) {
                    fits.push(r);
                }
            }
        }
        art.add("trajectory.csv", csv(|b| traj.write_csv(b)));
        art.monitors = Some(MonitorSummary::of_quantum(&traj));
    }
    art.json(
        "rates.json",
        &json!({ "preset": cfg.coupling.kernel_preset, "pair_potential": matrix_json(&hg), "pairs": pairs, "fits": fits }),
    );
    Ok(())
}

/// Scan template from the `classical.mode` block and the single coupling.
pub fn scan_template(cfg: &ScenarioConfig) -> Result<ScanTemplate> {
    let mode = cfg.mode_spec()?;
    let it = cfg.integrator()?;
    let pair = cfg.coupling.pairs.first().ok_or_else(|| ConfigError::Schema {
        path: "coupling.pairs".into(),
        reason: "limit-scan needs one coupling pair".into(),
    })?;
    let noise = cfg.noise()?;
    let scalar = |m: &DMatrix<f64>| m[(0, 0)];
    Ok(ScanTemplate {
        kappa: mode.kappa,
        fhat: cfg.matrix(&pair.op, "coupling.pairs[0].op")?,
        hq: cfg.hq()?,
        rho_q: cfg.initial_quantum()?.matrix().clone(),
        units: cfg.units,
        dc: scalar(noise.dc()),
        dq: scalar(noise.dq()),
        phi_width: mode.phi_width,
        grid_sigmas: mode.grid_sigmas,
        points: mode.points,
        dt_ref: it.dt,
        c_ref: cfg.run.c_values.iter().cloned().fold(f64::INFINITY, f64::min),
        t_final: it.t_final,
        records_per_period: mode.records_per_period,
        scheme: it.scheme,
    })
}

fn limit_scan(cfg: &ScenarioConfig, art: &mut Artifacts) -> Result<()> {
    let template = scan_template(cfg)?;
    let report = c_scan(&template, &cfg.run.c_values)?;
    for p in &report.points {
        art.add(&format!("series_c{}.csv", p.c), csv(|b| p.series.write_csv(b)));
    }
    art.json("scan.json", &report);
    let mut m = MonitorSummary { min_spectrum: f64::INFINITY, ..Default::default() };
    for p in &report.points {
        m.max_trace_error = m.max_trace_error.max(p.max_trace_error);
        m.min_spectrum = m.min_spectrum.min(p.min_spectrum);
    }
    art.monitors = Some(m);
    Ok(())
}
