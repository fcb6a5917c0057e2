//! Vintage-indexed SCC estimates, retrospective adjustments, and the
//! retro-agency's rolling releases.
//!
//! An estimate for vintage `v` evaluated at time `t` discounts measured
//! damages for periods up to `t` and model forecasts for the remaining
//! periods through the world horizon, all in vintage-time present value.
//! The per-period adjustment is the exact money difference between two
//! consecutive evaluations, so for every vintage
//!
//! ```text
//! estimate(v, v) + sum of adjustments through T = estimate(v, T)
//! ```
//!
//! telescopes exactly in fixed-point arithmetic.

use crate::damage::{
    forecast_marginal_damage, shifted_cubic, DamageHistory, DamageWorld, EstimatorModel,
};
use crate::ledger::Year;
use crate::money::Money;
use crate::regression::{fit_least_squares, Observation};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io;

/// SCC estimate for one vintage at one evaluation time, per tonne.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SccEstimate {
    pub vintage: Year,
    pub eval_time: Year,
    pub value: Money,
}

/// Year-over-year revision of one vintage's estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjustment {
    pub vintage: Year,
    /// Evaluation year the revision lands in.
    pub period: Year,
    pub delta: Money,
}

/// The agency's annual publication: estimates for the trailing window of
/// vintages, all evaluated at the release time, newest vintage first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetroAgencyRelease {
    pub release_time: Year,
    pub window: u32,
    pub estimates: Vec<SccEstimate>,
}

impl RetroAgencyRelease {
    pub fn estimate_for(&self, vintage: Year) -> Option<&SccEstimate> {
        self.estimates.iter().find(|e| e.vintage == vintage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SccError {
    #[error("no measurement for vintage {vintage} in period {period}")]
    DataGap { vintage: Year, period: Year },
    #[error("evaluation time {eval_time} precedes vintage {vintage}")]
    EvalBeforeVintage { vintage: Year, eval_time: Year },
    #[error("evaluation time {eval_time} exceeds world horizon {horizon}")]
    EvalPastHorizon { eval_time: Year, horizon: Year },
    #[error("adjustment inputs have mismatched vintages ({prev} vs {curr})")]
    VintageMismatch { prev: Year, curr: Year },
    #[error("adjustment inputs are not consecutive evaluations ({prev} then {curr})")]
    NonConsecutiveEvals { prev: Year, curr: Year },
    #[error("estimate table lacks vintage {vintage} evaluated at {eval_time}")]
    MissingEstimate { vintage: Year, eval_time: Year },
    #[error("release window of {window} vintages does not fit before time {release_time}")]
    WindowTooWide { release_time: Year, window: u32 },
    #[error(
        "estimate for vintage {vintage} at {eval_time} already recorded with a different value"
    )]
    ConflictingEstimate { vintage: Year, eval_time: Year },
    #[error(transparent)]
    Damage(#[from] crate::damage::DamageError),
}

/// Discount a period-ordered value stream back to its first element's date.
///
/// This is the one summation route shared by estimates, oracles, and premium
/// quotes: same inputs produce bit-identical floats, which is what makes
/// money-level equalities between those quantities exact.
pub fn discounted_money_sum<I: IntoIterator<Item = Money>>(values: I, discount_rate: f64) -> f64 {
    let rho = 1.0 / (1.0 + discount_rate);
    let mut factor = 1.0;
    let mut acc = 0.0;
    for value in values {
        acc += value.to_f64() * factor;
        factor *= rho;
    }
    acc
}

/// Estimate the SCC of `vintage` as seen at `eval_time`: measured damages
/// through `eval_time`, model forecasts beyond it, discounted to the vintage
/// year and quantized once.
pub fn estimate_scc(
    world: &DamageWorld,
    model: &EstimatorModel,
    history: &DamageHistory,
    vintage: Year,
    eval_time: Year,
) -> Result<SccEstimate, SccError> {
    if eval_time < vintage {
        return Err(SccError::EvalBeforeVintage { vintage, eval_time });
    }
    if eval_time > world.horizon {
        return Err(SccError::EvalPastHorizon {
            eval_time,
            horizon: world.horizon,
        });
    }
    let mut per_period = Vec::with_capacity((world.horizon - vintage + 1) as usize);
    for period in vintage..=eval_time {
        per_period.push(
            history
                .get(vintage, period)
                .ok_or(SccError::DataGap { vintage, period })?,
        );
    }
    for period in eval_time + 1..=world.horizon {
        per_period.push(forecast_marginal_damage(model, world, vintage, period)?);
    }
    Ok(SccEstimate {
        vintage,
        eval_time,
        value: Money::from_f64(discounted_money_sum(per_period, world.discount_rate)),
    })
}

/// The finite-horizon true SCC: the fully retrospective estimate at the
/// world horizon. Used as the ground-truth target in tests and metrics.
pub fn true_scc_oracle(
    world: &DamageWorld,
    history: &DamageHistory,
    vintage: Year,
) -> Result<Money, SccError> {
    let mut per_period = Vec::with_capacity((world.horizon - vintage + 1) as usize);
    for period in vintage..=world.horizon {
        per_period.push(
            history
                .get(vintage, period)
                .ok_or(SccError::DataGap { vintage, period })?,
        );
    }
    Ok(Money::from_f64(discounted_money_sum(
        per_period,
        world.discount_rate,
    )))
}

/// Exact adjustment between two consecutive evaluations of one vintage.
pub fn compute_adjustment(prev: &SccEstimate, curr: &SccEstimate) -> Result<Adjustment, SccError> {
    if prev.vintage != curr.vintage {
        return Err(SccError::VintageMismatch {
            prev: prev.vintage,
            curr: curr.vintage,
        });
    }
    if curr.eval_time != prev.eval_time + 1 {
        return Err(SccError::NonConsecutiveEvals {
            prev: prev.eval_time,
            curr: curr.eval_time,
        });
    }
    Ok(Adjustment {
        vintage: curr.vintage,
        period: curr.eval_time,
        delta: curr.value - prev.value,
    })
}

/// Append-only store of every estimate the agency has computed.
#[derive(Debug, Clone, Default)]
pub struct EstimateTable {
    values: BTreeMap<(Year, Year), Money>,
}

impl EstimateTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, estimate: SccEstimate) -> Result<(), SccError> {
        let key = (estimate.vintage, estimate.eval_time);
        if let Some(existing) = self.values.get(&key) {
            if *existing != estimate.value {
                return Err(SccError::ConflictingEstimate {
                    vintage: estimate.vintage,
                    eval_time: estimate.eval_time,
                });
            }
            return Ok(());
        }
        self.values.insert(key, estimate.value);
        Ok(())
    }

    pub fn get(&self, vintage: Year, eval_time: Year) -> Option<SccEstimate> {
        self.values
            .get(&(vintage, eval_time))
            .map(|value| SccEstimate {
                vintage,
                eval_time,
                value: *value,
            })
    }

    /// Adjustment landing at `period` for `vintage`, when both evaluations
    /// are on file.
    pub fn adjustment(&self, vintage: Year, period: Year) -> Option<Adjustment> {
        if period == 0 {
            return None;
        }
        let prev = self.get(vintage, period - 1)?;
        let curr = self.get(vintage, period)?;
        Some(compute_adjustment(&prev, &curr).expect("consecutive by construction"))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = SccEstimate> + '_ {
        self.values
            .iter()
            .map(|((vintage, eval_time), value)| SccEstimate {
                vintage: *vintage,
                eval_time: *eval_time,
                value: *value,
            })
    }

    /// Export as CSV with columns `vintage,eval_time,value`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["vintage", "eval_time", "value"])?;
        for estimate in self.iter() {
            w.write_record([
                estimate.vintage.to_string(),
                estimate.eval_time.to_string(),
                estimate.value.to_decimal_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pull the release for time `t` covering vintages `t - n ..= t` out of the
/// estimate table, newest vintage first.
pub fn retro_agency_release(
    table: &EstimateTable,
    release_time: Year,
    window: u32,
) -> Result<RetroAgencyRelease, SccError> {
    if window > release_time {
        return Err(SccError::WindowTooWide {
            release_time,
            window,
        });
    }
    let mut estimates = Vec::with_capacity(window as usize + 1);
    for vintage in (release_time - window..=release_time).rev() {
        estimates.push(
            table
                .get(vintage, release_time)
                .ok_or(SccError::MissingEstimate {
                    vintage,
                    eval_time: release_time,
                })?,
        );
    }
    Ok(RetroAgencyRelease {
        release_time,
        window,
        estimates,
    })
}

/// How the agency's model evolves over calendar time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgencySchedule {
    pub base_model: EstimatorModel,
    /// Annealing speed per year once innovation starts; 0 disables it.
    #[serde(default)]
    pub anneal_rate: f64,
    /// Calendar year innovation starts, if ever.
    #[serde(default)]
    pub anneal_start: Option<Year>,
    /// Refit believed coefficients by least squares on the calibration
    /// window before forecasting.
    #[serde(default)]
    pub refit: bool,
}

impl AgencySchedule {
    pub fn fixed(base_model: EstimatorModel) -> Self {
        AgencySchedule {
            base_model,
            anneal_rate: 0.0,
            anneal_start: None,
            refit: false,
        }
    }

    /// Annealing weight in force at calendar time `t`.
    pub fn alpha_at(&self, t: Year) -> f64 {
        match self.anneal_start {
            Some(start) if self.anneal_rate > 0.0 && t > start => {
                (self.base_model.anneal_alpha + self.anneal_rate * (t - start) as f64).min(1.0)
            }
            _ => self.base_model.anneal_alpha,
        }
    }

    /// The model the agency forecasts with at calendar time `t`.
    pub fn model_at(
        &self,
        world: &DamageWorld,
        history: &DamageHistory,
        t: Year,
    ) -> EstimatorModel {
        let mut model = self.base_model;
        if self.refit {
            model = refit_model(&model, world, history, t);
        }
        model.anneal_alpha = self.alpha_at(t);
        model
    }
}

/// Least-squares refit of believed coefficients on the trailing calibration
/// window of measurements (periods in `(t - window, t]`, all vintages).
///
/// The slow-onset regressor joins the basis only when the window contains
/// post-onset observations; otherwise the design would be singular in that
/// column and the believed coefficient carries over. A fit that still fails
/// (too few points, collinear design) leaves the model unchanged.
pub fn refit_model(
    model: &EstimatorModel,
    world: &DamageWorld,
    history: &DamageHistory,
    t: Year,
) -> EstimatorModel {
    let window = model.calibration_window;
    let earliest = t.saturating_sub(window - 1);
    let mut taus: Vec<Year> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for m in history.measurements() {
        if m.period >= earliest && m.period <= t {
            taus.push(m.period - m.vintage);
            values.push(m.value.to_f64());
        }
    }
    let with_onset = taus.iter().any(|tau| *tau > world.onset_delay);
    let samples: Vec<Observation> = taus
        .iter()
        .zip(&values)
        .map(|(tau, value)| {
            let mut inputs = vec![*tau as f64];
            if with_onset {
                inputs.push(shifted_cubic(*tau, world.onset_delay));
            }
            Observation::new(inputs, *value)
        })
        .collect();
    match fit_least_squares(&samples) {
        Ok(coefficients) => EstimatorModel {
            b2: coefficients[0],
            b4: if with_onset {
                coefficients[1]
            } else {
                model.b4
            },
            ..*model
        },
        Err(_) => *model,
    }
}
