//! Per-run metric series and cross-seed aggregation.

use crate::exchange::SccSignal;
use crate::ledger::{AgentId, Party, Year};
use crate::money::Money;
use serde::{Deserialize, Serialize};

/// Volume-weighted premium quartiles observed in one year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PremiumQuantiles {
    pub p25: Money,
    pub p50: Money,
    pub p75: Money,
}

/// Lower quantile of `(value, weight)` samples at `q` in (0, 1].
pub fn weighted_quantile(samples: &[(Money, u64)], q: f64) -> Option<Money> {
    let total: u64 = samples.iter().map(|(_, w)| *w).sum();
    if total == 0 {
        return None;
    }
    let mut sorted: Vec<(Money, u64)> = samples.iter().copied().filter(|(_, w)| *w > 0).collect();
    sorted.sort_by_key(|(value, _)| *value);
    let threshold = (q * total as f64).ceil().max(1.0) as u64;
    let mut cumulative = 0u64;
    for (value, weight) in sorted {
        cumulative += weight;
        if cumulative >= threshold {
            return Some(value);
        }
    }
    None
}

pub fn premium_quantiles(samples: &[(Money, u64)]) -> Option<PremiumQuantiles> {
    Some(PremiumQuantiles {
        p25: weighted_quantile(samples, 0.25)?,
        p50: weighted_quantile(samples, 0.50)?,
        p75: weighted_quantile(samples, 0.75)?,
    })
}

/// Everything a run reports: per-year series (all of length `years`) plus
/// per-run scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub mechanism: String,
    pub seed: u64,
    pub years: Year,
    /// Mean adjustment across vintages that settled one in that year.
    pub mean_delta: Vec<f64>,
    pub government_balance: Vec<Money>,
    /// Cumulative unpaid polluter obligations.
    pub shortfall_total: Vec<Money>,
    /// Cumulative count of insurer defaults.
    pub insurer_defaults: Vec<u32>,
    pub exchange_cash: Vec<Money>,
    pub scc_signal: Vec<Option<SccSignal>>,
    pub premium_quantiles: Vec<Option<PremiumQuantiles>>,
    /// Sum over vintages of |oracle - total paid|.
    pub ppp_gap: Money,
    /// Sum over vintages of max(0, oracle - total paid).
    pub oracle_shortfall: Money,
    /// Cumulative losses dumped on swap counterparties by defaults.
    pub counterparty_losses: Money,
    /// Tonnes insured per insurer over the whole run.
    pub insurer_volumes: Vec<(AgentId, u64)>,
    pub final_balances: Vec<(Party, Money)>,
    pub ledger_entries: u64,
}

impl RunMetrics {
    pub fn new(scenario: &str, mechanism: &str, seed: u64, years: Year) -> Self {
        RunMetrics {
            scenario: scenario.to_string(),
            mechanism: mechanism.to_string(),
            seed,
            years,
            mean_delta: Vec::with_capacity(years as usize),
            government_balance: Vec::with_capacity(years as usize),
            shortfall_total: Vec::with_capacity(years as usize),
            insurer_defaults: Vec::with_capacity(years as usize),
            exchange_cash: Vec::with_capacity(years as usize),
            scc_signal: Vec::with_capacity(years as usize),
            premium_quantiles: Vec::with_capacity(years as usize),
            ppp_gap: Money::ZERO,
            oracle_shortfall: Money::ZERO,
            counterparty_losses: Money::ZERO,
            insurer_volumes: Vec::new(),
            final_balances: Vec::new(),
            ledger_entries: 0,
        }
    }

    /// Named numeric series for CSV export, one `(name, values)` pair each.
    pub fn numeric_series(&self) -> Vec<(&'static str, Vec<f64>)> {
        vec![
            ("mean_delta", self.mean_delta.clone()),
            (
                "government_balance",
                self.government_balance.iter().map(|m| m.to_f64()).collect(),
            ),
            (
                "shortfall_total",
                self.shortfall_total.iter().map(|m| m.to_f64()).collect(),
            ),
            (
                "insurer_defaults",
                self.insurer_defaults.iter().map(|c| *c as f64).collect(),
            ),
            (
                "exchange_cash",
                self.exchange_cash.iter().map(|m| m.to_f64()).collect(),
            ),
            (
                "scc_signal",
                self.scc_signal
                    .iter()
                    .map(|s| s.map(|s| s.value.to_f64()).unwrap_or(f64::NAN))
                    .collect(),
            ),
            (
                "premium_p50",
                self.premium_quantiles
                    .iter()
                    .map(|q| q.map(|q| q.p50.to_f64()).unwrap_or(f64::NAN))
                    .collect(),
            ),
        ]
    }
}

/// Mean and population variance per index across seeds; NaN samples (years
/// with no observation) are skipped per index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesAggregate {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub samples: Vec<u64>,
}

pub fn aggregate_series(per_seed: &[Vec<f64>]) -> SeriesAggregate {
    let len = per_seed.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut mean = vec![0.0; len];
    let mut variance = vec![0.0; len];
    let mut samples = vec![0u64; len];
    for i in 0..len {
        let values: Vec<f64> = per_seed
            .iter()
            .filter_map(|s| s.get(i).copied())
            .filter(|v| v.is_finite())
            .collect();
        samples[i] = values.len() as u64;
        if values.is_empty() {
            mean[i] = f64::NAN;
            variance[i] = f64::NAN;
            continue;
        }
        let m = values.iter().sum::<f64>() / values.len() as f64;
        mean[i] = m;
        variance[i] = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    }
    SeriesAggregate {
        mean,
        variance,
        samples,
    }
}

/// Cross-seed aggregate of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub scenario: String,
    pub mechanism: String,
    pub seeds: Vec<u64>,
    pub series: Vec<(String, SeriesAggregate)>,
    pub ppp_gap_mean: f64,
    pub ppp_gap_variance: f64,
    pub oracle_shortfall_mean: f64,
    pub counterparty_losses_mean: f64,
}

pub fn aggregate_runs(runs: &[RunMetrics]) -> SweepAggregate {
    assert!(!runs.is_empty(), "aggregate of zero runs");
    let names: Vec<&'static str> = runs[0]
        .numeric_series()
        .iter()
        .map(|(name, _)| *name)
        .collect();
    let mut series = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let per_seed: Vec<Vec<f64>> = runs
            .iter()
            .map(|r| r.numeric_series()[i].1.clone())
            .collect();
        series.push((name.to_string(), aggregate_series(&per_seed)));
    }
    let gap_mean = runs.iter().map(|r| r.ppp_gap.to_f64()).sum::<f64>() / runs.len() as f64;
    let gap_var = runs
        .iter()
        .map(|r| {
            let d = r.ppp_gap.to_f64() - gap_mean;
            d * d
        })
        .sum::<f64>()
        / runs.len() as f64;
    SweepAggregate {
        scenario: runs[0].scenario.clone(),
        mechanism: runs[0].mechanism.clone(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        series,
        ppp_gap_mean: gap_mean,
        ppp_gap_variance: gap_var,
        oracle_shortfall_mean: runs
            .iter()
            .map(|r| r.oracle_shortfall.to_f64())
            .sum::<f64>()
            / runs.len() as f64,
        counterparty_losses_mean: runs
            .iter()
            .map(|r| r.counterparty_losses.to_f64())
            .sum::<f64>()
            / runs.len() as f64,
    }
}
