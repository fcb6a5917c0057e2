//! Scenario configuration, the deterministic run loop, metric extraction,
//! and file output.

pub mod config;
pub mod engine;
pub mod metrics;
pub mod output;

pub use config::{ConfigError, MechanismKind, ScenarioConfig};
pub use engine::{run_scenario, run_seeds, RoundData, RunOutput, ScenarioError};
pub use metrics::{aggregate_runs, RunMetrics, SweepAggregate};
pub use output::{write_run_outputs, write_sweep_outputs, OutputError};

/// Run every seed and aggregate: the sweep entry point.
pub fn sweep(
    config: &ScenarioConfig,
    seeds: &[u64],
) -> Result<(Vec<RunMetrics>, SweepAggregate), ScenarioError> {
    assert!(!seeds.is_empty(), "sweep needs at least one seed");
    let runs = run_seeds(config, seeds)?;
    let aggregate = aggregate_runs(&runs);
    Ok((runs, aggregate))
}
