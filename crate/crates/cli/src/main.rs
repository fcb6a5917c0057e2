//! Command-line runner: execute scenarios, sweep seeds, audit ledgers.
//!
//! Exit codes: 0 on success, 1 on configuration or runtime errors, 2 on
//! ledger audit failure.

use clap::{Parser, Subcommand};
use retrocap::ledger::audit_csv;
use retrocap::scenario::{
    run_scenario, sweep, write_run_outputs, write_sweep_outputs, ScenarioConfig, ScenarioError,
};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 1;
const EXIT_AUDIT: u8 = 2;

#[derive(Parser)]
#[command(
    name = "retrocap",
    version,
    about = "Deterministic simulator of retroactive carbon-pricing mechanisms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario for one seed and write its outputs.
    Run {
        /// Scenario config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the first `seeds` seeds and write aggregate outputs.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Number of seeds: the config's seed list, extended with
        /// consecutive values when it is shorter than requested.
        #[arg(long)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Structurally audit an exported ledger CSV.
    Audit {
        #[arg(long)]
        ledger: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<ScenarioConfig, ExitCode> {
    let text = fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read config {}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })?;
    ScenarioConfig::from_json(&text).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn scenario_exit(error: ScenarioError) -> ExitCode {
    eprintln!("error: {error}");
    let mut cause: &ScenarioError = &error;
    while let ScenarioError::SeededRun { source, .. } = cause {
        cause = source;
    }
    match cause {
        ScenarioError::Audit { .. } => ExitCode::from(EXIT_AUDIT),
        _ => ExitCode::from(EXIT_CONFIG),
    }
}

fn resolve_seeds(config: &ScenarioConfig, count: u64) -> Vec<u64> {
    let mut seeds: Vec<u64> = config.seeds.iter().copied().take(count as usize).collect();
    let mut next = config
        .seeds
        .iter()
        .copied()
        .max()
        .map(|m| m + 1)
        .unwrap_or(0);
    while (seeds.len() as u64) < count {
        seeds.push(next);
        next += 1;
    }
    seeds
}

fn cmd_run(config_path: &Path, seed: u64, out: &Path) -> ExitCode {
    let config = match load_config(config_path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let output = match run_scenario(&config, seed) {
        Ok(o) => o,
        Err(e) => return scenario_exit(e),
    };
    match write_run_outputs(out, &output) {
        Ok(files) => {
            println!(
                "run {} seed {} complete: {} ledger entries, {} files in {}",
                config.name,
                seed,
                output.metrics.ledger_entries,
                files.len(),
                out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn cmd_sweep(config_path: &Path, count: u64, out: &Path) -> ExitCode {
    let config = match load_config(config_path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if count == 0 {
        eprintln!("error: sweep needs at least one seed");
        return ExitCode::from(EXIT_CONFIG);
    }
    let seeds = resolve_seeds(&config, count);
    let (runs, aggregate) = match sweep(&config, &seeds) {
        Ok(r) => r,
        Err(e) => return scenario_exit(e),
    };
    match write_sweep_outputs(out, &aggregate) {
        Ok(files) => {
            println!(
                "sweep {} over {} seeds complete: {} files in {}",
                config.name,
                runs.len(),
                files.len(),
                out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn cmd_audit(ledger: &Path) -> ExitCode {
    let file = match fs::File::open(ledger) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: cannot open {}: {e}", ledger.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match audit_csv(file) {
        Ok(report) => {
            println!("audit passed: {} entries", report.entries);
            for (party, net) in report.net_by_party {
                println!("  {party}: {net}");
            }
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("audit failed: {failure}");
            ExitCode::from(EXIT_AUDIT)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, &out),
        Command::Sweep { config, seeds, out } => cmd_sweep(&config, seeds, &out),
        Command::Audit { ledger } => cmd_audit(&ledger),
    }
}
