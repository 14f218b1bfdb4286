use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybridyn::config::{parse_with_overrides, ScenarioConfig};
use hybridyn::error::ConfigError;
use hybridyn::run::{output_dir, run};
use hybridyn::Error;

#[derive(Parser)]
#[command(name = "hybridyn", version, about = "Hybrid quantum-classical dynamics runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the hybrid master equation on a phase-space grid.
    Simulate(Common),
    /// Average noisy Aleksandrov trajectories.
    Unravel(Common),
    /// Integrate the reduced quantum master equation.
    SimulateLindblad(Common),
    /// Assemble the lattice DC and DQ kernels.
    Kernels(Common),
    /// Decoherence rates and pair potential of lattice mass branches.
    Rates(Common),
    /// Scan the speed of light for the single-mode limit.
    LimitScan(Common),
    /// Run the invariant suite.
    Check(CheckArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario document (JSON).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args)]
struct CheckArgs {
    /// Optional scenario; only its units are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args)]
struct Shared {
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; `HYBRIDYN_OUT` takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the internal parallel loops.
    #[arg(long)]
    threads: Option<usize>,
    /// `key.path=value`, applied before validation. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

const DEFAULT_CHECK: &str = r#"{"quantum": {"dim": 1, "initial": "identity"}, "run": {"mode": "check"}}"#;

fn load(path: Option<&PathBuf>, mode: &str, overrides: &[String]) -> Result<(ScenarioConfig, String), Error> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(ConfigError::Io)?,
        None => DEFAULT_CHECK.to_string(),
    };
    let mut all = vec![format!("run.mode=\"{mode}\"")];
    all.extend_from_slice(overrides);
    Ok(parse_with_overrides(&text, &all)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, path, shared) = match &cli.command {
        Command::Simulate(c) => ("simulate", Some(&c.config), &c.shared),
        Command::Unravel(c) => ("unravel", Some(&c.config), &c.shared),
        Command::SimulateLindblad(c) => ("simulate-lindblad", Some(&c.config), &c.shared),
        Command::Kernels(c) => ("kernels", Some(&c.config), &c.shared),
        Command::Rates(c) => ("rates", Some(&c.config), &c.shared),
        Command::LimitScan(c) => ("limit-scan", Some(&c.config), &c.shared),
        Command::Check(c) => ("check", c.config.as_ref(), &c.shared),
    };
    if let Some(n) = shared.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = load(path, mode, &shared.overrides)
        .and_then(|(cfg, hash)| run(&cfg, &hash, shared.seed, &output_dir(shared.out.as_deref())));
    match outcome {
        Ok(record) => {
            println!("{mode}: wrote {} files, config {}", record.manifest.len() + 2, &record.config_hash[..12]);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
