use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use pavgrid::experiment::{run_monte_carlo, run_training, ExperimentError, MonteCarloResult};
use pavgrid::grid::CellKind;
use pavgrid::output::{emit_condition_artifacts, emit_outputs, OutputError, RunManifest};
use pavgrid::{
    load_map, parse_config_with_overrides, Condition, ConfigError, Environment, GridMap, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "pavgrid",
    version,
    about = "Pavlovian and instrumental learners on an RF localization grid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured condition over all Monte Carlo runs.
    Run(RunArgs),
    /// Train all four conditions with the same seeds.
    Compare(RunArgs),
    /// Re-create field and trajectory files from a saved run manifest.
    Snapshot {
        /// Path to a run_manifest.json.
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also render SVG heatmaps.
        #[arg(long)]
        svg: bool,
    },
    /// Parse a map file and print a summary.
    ValidateMap { path: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Base seed; run r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-key override, e.g. `--set hyper.gamma=0.95`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Also render SVG plots.
    #[arg(long)]
    svg: bool,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Map(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Map(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<OutputError> for CliError {
    fn from(e: OutputError) -> Self {
        match e {
            OutputError::Io { .. } => CliError::Io(e.to_string()),
            OutputError::Manifest { .. } => CliError::Config(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    let document = match &args.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?,
        None => "{}".to_string(),
    };
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("base_seed={seed}"));
    }
    Ok(parse_config_with_overrides(&document, &overrides)?)
}

fn read_map(path: &Path) -> Result<GridMap, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Map(format!("cannot read {}: {e}", path.display())))?;
    load_map(&text).map_err(|e| CliError::Map(format!("{}: {e}", path.display())))
}

fn scenario_map(cfg: &RunConfig) -> Result<GridMap, CliError> {
    match &cfg.map {
        Some(path) => read_map(path),
        None => Ok(GridMap::scenario()),
    }
}

fn train(
    env: &Environment,
    cfg: &RunConfig,
    conditions: &[Condition],
) -> Result<Vec<MonteCarloResult>, CliError> {
    conditions
        .iter()
        .map(|&condition| {
            let c = RunConfig {
                condition,
                ..cfg.clone()
            };
            eprintln!(
                "training {condition}: {} runs x {} episodes",
                c.monte_carlo_runs, c.episodes
            );
            Ok(run_monte_carlo(env, &c)?)
        })
        .collect()
}

fn report(out: &Path, files: &[String]) {
    for f in files {
        println!("{}", out.join(f).display());
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load_config(&args)?;
            let env = Environment::new(scenario_map(&cfg)?, &cfg);
            let results = train(&env, &cfg, &[cfg.condition])?;
            report(
                &args.out,
                &emit_outputs(&args.out, &env.map, &cfg, &results, args.svg)?,
            );
        }
        Command::Compare(args) => {
            let cfg = load_config(&args)?;
            let env = Environment::new(scenario_map(&cfg)?, &cfg);
            let results = train(&env, &cfg, &Condition::ALL)?;
            report(
                &args.out,
                &emit_outputs(&args.out, &env.map, &cfg, &results, args.svg)?,
            );
        }
        Command::Snapshot { manifest, out, svg } => {
            let m = RunManifest::load(&manifest)?;
            m.config.validate()?;
            let map = scenario_map(&m.config)?;
            let env = Environment::new(map, &m.config);
            let seed = m.seeds.first().copied().unwrap_or(m.config.base_seed);
            for &condition in &m.conditions {
                let cfg = RunConfig {
                    condition,
                    ..m.config.clone()
                };
                let res = run_training(&env, &cfg, seed)?;
                let files = emit_condition_artifacts(&out, &env.map, condition, &res, svg)?;
                report(&out, &files);
            }
        }
        Command::ValidateMap { path } => {
            let map = read_map(&path)?;
            let count = |k| map.cells_of_kind(k).count();
            println!(
                "{}: {}x{} cells, {} agents, target ({}, {}), {} gate, {} GPS-denied, {} obstacle",
                path.display(),
                map.width(),
                map.height(),
                map.agent_starts().len(),
                map.target().x,
                map.target().y,
                count(CellKind::Gate),
                count(CellKind::GpsDenied),
                count(CellKind::Obstacle)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
