//! Command-line front end for the scenario runner.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parsim::scenario::{self, presets, ScenarioConfig, ScenarioError};

#[derive(Parser)]
#[command(name = "parsim", version, about = "Stablecoin par-value stress simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write daily.csv, market.csv, summary.json and events.jsonl.
    Run {
        /// Scenario file, or `preset:NAME`.
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every point of a parameter grid.
    Sweep {
        config: String,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
    },
    /// Parse and validate a scenario without running it.
    Validate { config: String },
    /// Built-in scenarios.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
}

fn load(arg: &str) -> Result<ScenarioConfig, ScenarioError> {
    if let Some(name) = arg.strip_prefix("preset:") {
        return presets::load(name);
    }
    let path = Path::new(arg);
    if !path.exists() && presets::source(arg).is_some() {
        return presets::load(arg);
    }
    ScenarioConfig::load(path)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), ScenarioError> {
    match cmd {
        Command::Run { config, seed, out } => {
            let cfg = load(&config)?;
            let result = scenario::run(&cfg, seed)?;
            result.write_to(&out)?;
            let s = &result.summary;
            println!(
                "{}: {} days, peak deviation {}bp, max delay {} days, delayed {} {} -> {}",
                s.name,
                s.horizon_days,
                s.peak_deviation_bp,
                s.max_delay_days,
                s.delayed,
                s.unit,
                out.display()
            );
        }
        Command::Sweep { config, grid, seed, out } => {
            let cfg = load(&config)?;
            let grid = scenario::load_grid(&grid)?;
            let report = scenario::sweep(&cfg, &grid, seed);
            report.write_to(&out)?;
            println!("{} points, {} failed -> {}", report.points.len(), report.failures(), out.join("sweep.csv").display());
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let agents = cfg.banks.len()
                + cfg.dealers.len()
                + cfg.issuers.len()
                + cfg.intermediaries.len()
                + cfg.holders.len()
                + cfg.buyers.len();
            scenario::build_system(&cfg, cfg.seed)?;
            println!("ok: {} ({agents} agents, {} days)", cfg.name, cfg.horizon_days);
        }
        Command::Presets { action: PresetAction::List } => {
            for (name, description) in presets::list() {
                println!("{name:<18} {description}");
            }
        }
    }
    Ok(())
}
