use std::path::{Path, PathBuf};
use std::process::Command;

use hybridyn::config::{parse_config, parse_with_overrides};
use hybridyn::error::ConfigError;
use hybridyn::run::execute;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hybridyn"));
    cmd.env_remove("HYBRIDYN_OUT");
    cmd
}

const QUBIT: &str = r#"{
  "quantum": {"dim": 2, "matrices": {"f": {"re": [[1, 0], [0, -1]]}, "up": {"re": [[1, 0], [0, 0]]}}, "initial": "up"},
  "classical": {"grid": [{"min": -10, "max": 10, "n": 32}, {"min": -10, "max": 10, "n": 32}],
                "initial": {"mean": [0, 0], "std": [1, 1]}},
  "coupling": {"pairs": [{"op": "f", "field": {"linear": [1, 0]}}], "noise": {"preset": "saturated", "dc": 2.0}},
  "integrator": {"dt": 0.01, "t_final": 0.05},
  "run": {"mode": "simulate"}
}"#;

#[test]
fn every_shipped_scenario_parses() {
    let mut count = 0;
    for entry in std::fs::read_dir(scenarios()).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert!(count >= 8);
}

#[test]
fn non_hermitian_matrix_is_named() {
    let text = QUBIT.replace(r#""f": {"re": [[1, 0], [0, -1]]}"#, r#""f": {"re": [[1, 2], [0, -1]]}"#);
    match parse_config(&text) {
        Err(ConfigError::NonHermitianMatrix { name, .. }) => assert_eq!(name, "f"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn schema_errors_carry_the_key_path() {
    let text = QUBIT.replace(r#""dt": 0.01"#, r#""dt": "fast""#);
    let err = parse_config(&text).unwrap_err().to_string();
    assert!(err.contains("integrator.dt"), "{err}");
}

#[test]
fn saturated_preset_sits_on_the_bound() {
    let cfg = parse_config(QUBIT).unwrap();
    let noise = cfg.noise().unwrap();
    let hbar = cfg.units.hbar;
    assert!((noise.dc()[(0, 0)] * noise.dq()[(0, 0)] - hbar * hbar / 4.0).abs() < 1e-15);
}

#[test]
fn hash_ignores_key_order_and_tracks_overrides() {
    let (_, h0) = parse_with_overrides(QUBIT, &[]).unwrap();
    let reordered = r#"{
      "run": {"mode": "simulate"},
      "integrator": {"t_final": 0.05, "dt": 0.01},
      "coupling": {"noise": {"dc": 2.0, "preset": "saturated"}, "pairs": [{"field": {"linear": [1, 0]}, "op": "f"}]},
      "classical": {"initial": {"std": [1, 1], "mean": [0, 0]},
                    "grid": [{"n": 32, "max": 10, "min": -10}, {"n": 32, "max": 10, "min": -10}]},
      "quantum": {"initial": "up", "matrices": {"up": {"re": [[1, 0], [0, 0]]}, "f": {"re": [[1, 0], [0, -1]]}}, "dim": 2}
    }"#;
    let (_, h1) = parse_with_overrides(reordered, &[]).unwrap();
    assert_eq!(h0, h1);
    let (cfg, h2) = parse_with_overrides(QUBIT, &["integrator.dt=0.005".into()]).unwrap();
    assert_ne!(h0, h2);
    assert_eq!(cfg.integrator.unwrap().dt, 0.005);
    let (_, h3) = parse_with_overrides(QUBIT, &["classical.grid.0.n=20".into()]).unwrap();
    assert_ne!(h0, h3);
}

#[test]
fn kernels_mode_writes_both_matrices() {
    let text = std::fs::read_to_string(scenarios().join("kernels.json")).unwrap();
    let art = execute(&parse_config(&text).unwrap(), None).unwrap();
    let dc = String::from_utf8(art.get("dc.csv").unwrap().to_vec()).unwrap();
    assert_eq!(dc.lines().filter(|l| !l.trim().is_empty()).count() >= 512, true);
    assert!(art.get("dq.csv").is_some());
    assert!(art.get("kernels.json").is_some());
}

#[test]
fn check_mode_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin().args(["check", "--out"]).arg(dir.path()).status().unwrap();
    assert!(status.success());
    assert!(dir.path().join("checks.json").exists());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("qubit.json");
    std::fs::write(&cfg, QUBIT).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let status = bin().arg("simulate").arg("--config").arg(&cfg).arg("--out").arg(out).status().unwrap();
        assert!(status.success());
    }
    let mut names: Vec<String> =
        std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert!(names.contains(&"states.csv".to_string()));
    for name in names.iter().filter(|n| *n != "run.json") {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn output_env_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("env");
    let flag_out = dir.path().join("flag");
    let status = bin().env("HYBRIDYN_OUT", &env_out).args(["check", "--out"]).arg(&flag_out).status().unwrap();
    assert!(status.success());
    assert!(env_out.join("checks.json").exists());
    assert!(!flag_out.exists());
}

#[test]
fn exit_codes_separate_config_and_numerical_failures() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, QUBIT.replace(r#""dim": 2"#, r#""dim": 0"#)).unwrap();
    let status = bin().arg("simulate").arg("--config").arg(&bad).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(2));

    // A grid far too narrow for the initial state trips the boundary monitor.
    let tight = dir.path().join("tight.json");
    std::fs::write(&tight, QUBIT.replace(r#""std": [1, 1]"#, r#""std": [3, 3]"#)).unwrap();
    let status = bin().arg("simulate").arg("--config").arg(&tight).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(3));

    let missing = bin().args(["simulate", "--config", "/nonexistent/x.json"]).status().unwrap();
    assert_eq!(missing.code(), Some(2));
}
