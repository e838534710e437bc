//! Command-line runner for the experiment scenarios.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use inertial_sde::config::{RunConfig, Scenario};
use inertial_sde::scenario::run_scenario;
use inertial_sde::Error;

#[derive(Parser)]
#[command(
    name = "inertial-sde",
    version,
    about = "Simulate stochastic inertial dynamics and check their convergence behaviour"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo gap curve and one sample trajectory.
    Simulate(RunArgs),
    /// Tail rate fits and per-path diagnostics.
    Rates(RunArgs),
    /// Strong error orders of the inertial scheme.
    Consistency(RunArgs),
    /// Direct scheme against the time-scaled, averaged first-order run.
    TransformCheck(RunArgs),
    /// Tikhonov conditions and minimum-norm selection.
    Tikhonov(RunArgs),
    /// Linear rate under a Polyak–Łojasiewicz inequality.
    Pl(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the configured seed and INERTIAL_SDE_SEED.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the number of Monte Carlo paths.
    #[arg(long, value_name = "N")]
    paths: Option<usize>,
    /// Parent directory of the run directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl Command {
    fn split(self) -> (Scenario, RunArgs) {
        match self {
            Command::Simulate(a) => (Scenario::Simulate, a),
            Command::Rates(a) => (Scenario::Rates, a),
            Command::Consistency(a) => (Scenario::Consistency, a),
            Command::TransformCheck(a) => (Scenario::TransformCheck, a),
            Command::Tikhonov(a) => (Scenario::Tikhonov, a),
            Command::Pl(a) => (Scenario::Pl, a),
        }
    }
}

fn resolve(scenario: Scenario, args: RunArgs) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&args.config)?;
    if cfg.scenario != scenario {
        log::info!(
            "config names scenario `{}`; running `{}`",
            cfg.scenario.name(),
            scenario.name()
        );
        cfg.scenario = scenario;
    }
    cfg.apply_env()?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.paths {
        cfg.n_paths = n;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (scenario, args) = Cli::parse().command.split();
    let outcome = resolve(scenario, args).and_then(|cfg| run_scenario(&cfg));
    match outcome {
        Ok(out) => {
            for (k, v) in &out.summary {
                println!("{k} = {v}");
            }
            for v in &out.verdicts {
                println!(
                    "verdict.{} = {}",
                    v.name,
                    if v.passed { "pass" } else { "fail" }
                );
            }
            println!("output = {}", out.dir.display());
            ExitCode::from(out.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
