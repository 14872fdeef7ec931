use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qtherm_cli::{run, CliError, Mode, RunConfig, ScenarioName};

/// Stochastic thermodynamics of open quantum systems: samples, enumerates or
/// integrates one of the built-in scenarios and writes `trajectories.csv`,
/// `summary.json` and `manifest.json`.
#[derive(Debug, Parser)]
#[command(name = "qtherm", version)]
struct Args {
    /// Scenario preset; optional when `--config` names one.
    #[arg(long, value_enum)]
    scenario: Option<ScenarioName>,
    /// TOML or JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_traj: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    /// Number of trajectories whose per-step ledger is written.
    #[arg(long)]
    csv_trajectories: Option<u64>,
}

fn config_from(args: &Args) -> Result<RunConfig, CliError> {
    let mut config = match (&args.config, args.scenario) {
        (Some(path), scenario) => {
            let c = RunConfig::load(path)?;
            if scenario.is_some_and(|s| s != c.scenario) {
                return Err(CliError::Config("--scenario disagrees with the configuration file".into()));
            }
            c
        }
        (None, Some(s)) => RunConfig::preset(s),
        (None, None) => return Err(CliError::Config("either --scenario or --config is required".into())),
    };
    if let Some(v) = args.n_traj {
        config.n_traj = v;
    }
    if let Some(v) = args.steps {
        config.steps = v;
    }
    if let Some(v) = args.dt {
        config.dt = v;
    }
    if let Some(v) = args.seed {
        config.seed = Some(v);
    }
    if let Some(v) = args.mode {
        config.mode = v;
    }
    if let Some(v) = args.csv_trajectories {
        config.csv_trajectories = v;
    }
    if args.threads.is_some() {
        config.threads = args.threads;
    }
    config.out = Some(args.out.clone());
    Ok(config)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = config_from(&args).and_then(|config| {
        let artifacts = run(&config)?;
        artifacts.write(&args.out)?;
        Ok(artifacts)
    });
    match result {
        Ok(a) => {
            print!("{}", a.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("qtherm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
