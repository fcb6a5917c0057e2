//! File output: one CSV per metric series plus a JSON summary per run,
//! ledger and settlement exports, and exchange round dumps. Filenames embed
//! the scenario name and seed.

use crate::exchange::RoundRecord;
use crate::scenario::engine::RunOutput;
use crate::scenario::metrics::SweepAggregate;
use serde::Serialize;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("io error writing {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv error writing {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OutputError> {
    let json = serde_json::to_string_pretty(value).expect("serializable output");
    fs::write(path, json).map_err(io_err(path))
}

fn write_series_csv(path: &Path, values: &[f64]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["year", "value"]).map_err(csv_err(path))?;
    for (year, value) in values.iter().enumerate() {
        w.write_record([year.to_string(), format!("{value}")])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| io_err(path)(e))?;
    Ok(())
}

/// Write all artifacts of one run into `out_dir`.
pub fn write_run_outputs(out_dir: &Path, output: &RunOutput) -> Result<Vec<PathBuf>, OutputError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let stem = format!("{}-seed{}", output.metrics.scenario, output.metrics.seed);
    let mut written = Vec::new();

    let summary = out_dir.join(format!("{stem}-summary.json"));
    write_json(&summary, &output.metrics)?;
    written.push(summary);

    for (name, values) in output.metrics.numeric_series() {
        let path = out_dir.join(format!("{stem}-{name}.csv"));
        write_series_csv(&path, &values)?;
        written.push(path);
    }

    let ledger_path = out_dir.join(format!("{stem}-ledger.csv"));
    let file = fs::File::create(&ledger_path).map_err(io_err(&ledger_path))?;
    output
        .ledger
        .write_csv(io::BufWriter::new(file))
        .map_err(csv_err(&ledger_path))?;
    written.push(ledger_path);

    let estimates_path = out_dir.join(format!("{stem}-estimates.csv"));
    let file = fs::File::create(&estimates_path).map_err(io_err(&estimates_path))?;
    output
        .estimates
        .write_csv(io::BufWriter::new(file))
        .map_err(csv_err(&estimates_path))?;
    written.push(estimates_path);

    let settlements_path = out_dir.join(format!("{stem}-settlements.csv"));
    {
        let file = fs::File::create(&settlements_path).map_err(io_err(&settlements_path))?;
        let mut writer = io::BufWriter::new(file);
        // All years share one file; the report writer emits the header, so
        // merge reports into one before writing.
        let mut merged = crate::mechanisms::SettlementReport::default();
        for report in &output.reports {
            merged.records.extend(report.records.iter().copied());
        }
        merged
            .write_csv(&mut writer)
            .map_err(csv_err(&settlements_path))?;
        writer.flush().map_err(io_err(&settlements_path))?;
    }
    written.push(settlements_path);

    if !output.rounds.is_empty() {
        let rounds_path = out_dir.join(format!("{stem}-rounds.json"));
        let records: Vec<RoundRecord> = output
            .rounds
            .iter()
            .map(|r| RoundRecord {
                time: r.time,
                orders: &r.orders,
                trades: &r.trades,
                swaps: &r.swaps_created,
                signal: r.signal,
            })
            .collect();
        write_json(&rounds_path, &records)?;
        written.push(rounds_path);
    }
    Ok(written)
}

/// Write the aggregate of a sweep: one JSON summary plus a mean/variance
/// CSV per series.
pub fn write_sweep_outputs(
    out_dir: &Path,
    aggregate: &SweepAggregate,
) -> Result<Vec<PathBuf>, OutputError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let stem = format!("{}-sweep", aggregate.scenario);
    let mut written = Vec::new();

    let summary = out_dir.join(format!("{stem}-summary.json"));
    write_json(&summary, aggregate)?;
    written.push(summary.clone());

    for (name, series) in &aggregate.series {
        let path = out_dir.join(format!("{stem}-{name}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(["year", "mean", "variance", "samples"])
            .map_err(csv_err(&path))?;
        for year in 0..series.mean.len() {
            w.write_record([
                year.to_string(),
                format!("{}", series.mean[year]),
                format!("{}", series.variance[year]),
                series.samples[year].to_string(),
            ])
            .map_err(csv_err(&path))?;
        }
        w.flush().map_err(|e| io_err(&path)(e))?;
        written.push(path);
    }
    Ok(written)
}
