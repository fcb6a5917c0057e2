//! Ground-truth marginal damage process and estimator models.
//!
//! Each emission vintage causes a per-tonne damage flow in every later
//! period. The mean flow is quadratic-in-cumulative (linear marginal) plus a
//! slow-onset quartic component rendered as a shifted cubic in the marginal,
//! with i.i.d. Gaussian noise on top. Estimator models carry believed
//! coefficients plus an annealing weight that mixes them toward the true
//! functional form.

use crate::ledger::Year;
use crate::money::Money;
use crate::rng::{stream_rng, StreamDomain};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Parameters of the true stochastic damage process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DamageWorld {
    /// Linear marginal damage coefficient ($/t per year since emission).
    pub a2: f64,
    /// Coefficient of the slow-onset term.
    pub a4: f64,
    /// Years after emission before the slow-onset term activates.
    pub onset_delay: Year,
    /// Standard deviation of per-period damage noise.
    pub sigma: f64,
    /// Final settlement year of the world.
    pub horizon: Year,
    /// Social discount rate per year.
    pub discount_rate: f64,
}

impl DamageWorld {
    pub fn validate(&self) -> Result<(), String> {
        if self.a2 < 0.0 || !self.a2.is_finite() {
            return Err(format!(
                "a2 must be finite and non-negative, got {}",
                self.a2
            ));
        }
        if self.a4 < 0.0 || !self.a4.is_finite() {
            return Err(format!(
                "a4 must be finite and non-negative, got {}",
                self.a4
            ));
        }
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(format!(
                "sigma must be finite and non-negative, got {}",
                self.sigma
            ));
        }
        if self.horizon == 0 {
            return Err("horizon must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.discount_rate) {
            return Err(format!(
                "discount rate must lie in [0, 1), got {}",
                self.discount_rate
            ));
        }
        Ok(())
    }

    /// Noise-free mean marginal damage `tau` years after emission.
    pub fn true_mean(&self, tau: Year) -> f64 {
        self.a2 * tau as f64 + self.a4 * shifted_cubic(tau, self.onset_delay)
    }

    /// Discount factor for a flow `tau` years after the vintage.
    pub fn discount_factor(&self, tau: Year) -> f64 {
        (1.0 + self.discount_rate).powi(-(tau as i32))
    }
}

/// The slow-onset shape: zero until `onset` years have passed, cubic after.
pub fn shifted_cubic(tau: Year, onset: Year) -> f64 {
    let active = tau.saturating_sub(onset) as f64;
    active * active * active
}

/// An agent's (possibly misspecified) predictive damage model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorModel {
    /// Believed linear marginal coefficient.
    pub b2: f64,
    /// Believed slow-onset coefficient.
    pub b4: f64,
    /// Mixture weight toward the true functional form, in [0, 1].
    pub anneal_alpha: f64,
    /// Number of past measurements used when refitting coefficients.
    pub calibration_window: u32,
}

impl EstimatorModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.anneal_alpha) {
            return Err(format!(
                "anneal_alpha must lie in [0, 1], got {}",
                self.anneal_alpha
            ));
        }
        if self.calibration_window == 0 {
            return Err("calibration_window must be at least 1".to_string());
        }
        if !self.b2.is_finite() || !self.b4.is_finite() {
            return Err("model coefficients must be finite".to_string());
        }
        Ok(())
    }

    /// Believed mean before annealing, in the world's functional shape.
    pub fn believed_mean(&self, world: &DamageWorld, tau: Year) -> f64 {
        self.b2 * tau as f64 + self.b4 * shifted_cubic(tau, world.onset_delay)
    }

    /// Mixture mean: `(1 - alpha) * believed + alpha * true`.
    pub fn mixture_mean(&self, world: &DamageWorld, tau: Year) -> f64 {
        (1.0 - self.anneal_alpha) * self.believed_mean(world, tau)
            + self.anneal_alpha * world.true_mean(tau)
    }
}

/// One realized marginal damage observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasuredDamage {
    pub vintage: Year,
    pub period: Year,
    /// Realized marginal damage of this vintage in this period, per tonne.
    pub value: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DamageError {
    #[error("period {period} precedes vintage {vintage}")]
    PeriodBeforeVintage { vintage: Year, period: Year },
    #[error("period {period} exceeds world horizon {horizon}")]
    PeriodPastHorizon { period: Year, horizon: Year },
}

/// Draw the realized marginal damage for `(vintage, period)` from `rng`.
///
/// The value is the noise-free mean plus one Gaussian draw, quantized to
/// money. Callers that need reproducible histories should route draws
/// through [`DamageHistory`], which owns one stream per vintage and always
/// draws in period order.
pub fn true_marginal_damage(
    world: &DamageWorld,
    vintage: Year,
    period: Year,
    rng: &mut impl Rng,
) -> Result<MeasuredDamage, DamageError> {
    if period < vintage {
        return Err(DamageError::PeriodBeforeVintage { vintage, period });
    }
    if period > world.horizon {
        return Err(DamageError::PeriodPastHorizon {
            period,
            horizon: world.horizon,
        });
    }
    let mean = world.true_mean(period - vintage);
    let noise = if world.sigma > 0.0 {
        Normal::new(0.0, world.sigma)
            .expect("validated sigma")
            .sample(rng)
    } else {
        0.0
    };
    Ok(MeasuredDamage {
        vintage,
        period,
        value: Money::from_f64(mean + noise),
    })
}

/// Noise-free forecast of the marginal damage under the mixture model.
pub fn forecast_marginal_damage(
    model: &EstimatorModel,
    world: &DamageWorld,
    vintage: Year,
    period: Year,
) -> Result<Money, DamageError> {
    if period < vintage {
        return Err(DamageError::PeriodBeforeVintage { vintage, period });
    }
    Ok(Money::from_f64(model.mixture_mean(world, period - vintage)))
}

/// One linear annealing step: `alpha' = min(1, alpha + rate)`.
///
/// Values within representation error of 1 snap to exactly 1, so repeated
/// decimal steps (ten applications of 0.1) complete the anneal.
pub fn innovate_model(model: &EstimatorModel, anneal_rate: f64) -> EstimatorModel {
    assert!(anneal_rate >= 0.0, "anneal rate must be non-negative");
    let next = model.anneal_alpha + anneal_rate;
    EstimatorModel {
        anneal_alpha: if next >= 1.0 - 1e-9 { 1.0 } else { next },
        ..*model
    }
}

/// Realized damage history, one independent stream per vintage.
///
/// Draws are generated strictly in period order within a vintage and cached,
/// so any query pattern observes the same realized path for a given
/// `(world, seed)`.
#[derive(Debug, Clone)]
pub struct DamageHistory {
    world: DamageWorld,
    seed: u64,
    lanes: BTreeMap<Year, Lane>,
}

#[derive(Debug, Clone)]
struct Lane {
    rng: ChaCha8Rng,
    values: Vec<Money>,
}

impl DamageHistory {
    pub fn new(world: DamageWorld, seed: u64) -> Self {
        DamageHistory {
            world,
            seed,
            lanes: BTreeMap::new(),
        }
    }

    pub fn world(&self) -> &DamageWorld {
        &self.world
    }

    /// Realized value for `(vintage, period)`, generating any missing draws
    /// for earlier periods of the vintage first.
    pub fn value(&mut self, vintage: Year, period: Year) -> Result<Money, DamageError> {
        if period < vintage {
            return Err(DamageError::PeriodBeforeVintage { vintage, period });
        }
        if period > self.world.horizon {
            return Err(DamageError::PeriodPastHorizon {
                period,
                horizon: self.world.horizon,
            });
        }
        let world = self.world;
        let seed = self.seed;
        let lane = self.lanes.entry(vintage).or_insert_with(|| Lane {
            rng: stream_rng(seed, StreamDomain::Damage, vintage as u64),
            values: Vec::new(),
        });
        while lane.values.len() <= (period - vintage) as usize {
            let next_period = vintage + lane.values.len() as Year;
            let measured = true_marginal_damage(&world, vintage, next_period, &mut lane.rng)
                .expect("period bounds already checked");
            lane.values.push(measured.value);
        }
        Ok(lane.values[(period - vintage) as usize])
    }

    /// Already-generated value, if any, without advancing the stream.
    pub fn get(&self, vintage: Year, period: Year) -> Option<Money> {
        let lane = self.lanes.get(&vintage)?;
        if period < vintage {
            return None;
        }
        lane.values.get((period - vintage) as usize).copied()
    }

    /// All generated measurements, vintage-major then period order.
    pub fn measurements(&self) -> Vec<MeasuredDamage> {
        self.lanes
            .iter()
            .flat_map(|(vintage, lane)| {
                lane.values
                    .iter()
                    .enumerate()
                    .map(move |(offset, value)| MeasuredDamage {
                        vintage: *vintage,
                        period: vintage + offset as Year,
                        value: *value,
                    })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(a2: f64, a4: f64, onset: Year, sigma: f64) -> DamageWorld {
        DamageWorld {
            a2,
            a4,
            onset_delay: onset,
            sigma,
            horizon: 100,
            discount_rate: 0.0,
        }
    }

    fn noise_free_value(w: &DamageWorld, vintage: Year, period: Year) -> Money {
        let mut rng = stream_rng(0, StreamDomain::Auxiliary, 0);
        true_marginal_damage(w, vintage, period, &mut rng)
            .unwrap()
            .value
    }

    #[test]
    fn zero_elapsed_time_kills_every_term() {
        let w = world(1.0, 0.0, 0, 0.0);
        assert_eq!(noise_free_value(&w, 0, 0), Money::ZERO);
    }

    #[test]
    fn linear_mean_with_unit_coefficient() {
        let w = world(1.0, 0.0, 0, 0.0);
        assert_eq!(noise_free_value(&w, 0, 3), Money::from_units(3));
    }

    #[test]
    fn onset_cubic_hand_evaluation() {
        // Independent scalar evaluation: tau = 5, onset 2 gives
        // 1.0 * 5 + 0.01 * (5 - 2)^3 = 5 + 0.01 * 27 = 5.27.
        let by_hand = 1.0 * 5.0 + 0.01 * 27.0;
        assert_eq!(Money::from_f64(by_hand), Money::from_micros(5_270_000));

        let w = world(1.0, 0.01, 2, 0.0);
        assert_eq!(noise_free_value(&w, 0, 5), Money::from_micros(5_270_000));
    }

    #[test]
    fn period_before_vintage_is_a_domain_error() {
        let w = world(1.0, 0.0, 0, 0.0);
        let mut rng = stream_rng(0, StreamDomain::Auxiliary, 0);
        assert_eq!(
            true_marginal_damage(&w, 5, 4, &mut rng),
            Err(DamageError::PeriodBeforeVintage {
                vintage: 5,
                period: 4
            })
        );
    }

    #[test]
    fn period_past_horizon_is_rejected() {
        let w = world(1.0, 0.0, 0, 0.0);
        let mut rng = stream_rng(0, StreamDomain::Auxiliary, 0);
        assert_eq!(
            true_marginal_damage(&w, 0, 101, &mut rng),
            Err(DamageError::PeriodPastHorizon {
                period: 101,
                horizon: 100
            })
        );
    }

    #[test]
    fn full_annealing_reproduces_truth() {
        let w = world(1.3, 0.07, 4, 0.0);
        let model = EstimatorModel {
            b2: -2.0,
            b4: 9.9,
            anneal_alpha: 1.0,
            calibration_window: 1,
        };
        for period in 0..20 {
            assert_eq!(
                forecast_marginal_damage(&model, &w, 0, period).unwrap(),
                Money::from_f64(w.true_mean(period)),
            );
        }
    }

    #[test]
    fn correctly_specified_model_matches_truth() {
        let w = world(1.3, 0.07, 4, 0.0);
        let model = EstimatorModel {
            b2: 1.3,
            b4: 0.07,
            anneal_alpha: 0.0,
            calibration_window: 1,
        };
        for period in 0..20 {
            assert_eq!(
                forecast_marginal_damage(&model, &w, 0, period).unwrap(),
                Money::from_f64(w.true_mean(period)),
            );
        }
    }

    #[test]
    fn misspecified_model_misses_the_onset_term() {
        let w = world(1.0, 0.01, 2, 0.0);
        let model = EstimatorModel {
            b2: 1.0,
            b4: 0.0,
            anneal_alpha: 0.0,
            calibration_window: 1,
        };
        assert_eq!(
            forecast_marginal_damage(&model, &w, 0, 5).unwrap(),
            Money::from_units(5)
        );
        assert_eq!(noise_free_value(&w, 0, 5), Money::from_micros(5_270_000));
    }

    #[test]
    fn annealing_steps_linearly_and_clamps() {
        let base = EstimatorModel {
            b2: 1.0,
            b4: 0.0,
            anneal_alpha: 0.0,
            calibration_window: 1,
        };
        assert_eq!(innovate_model(&base, 0.1).anneal_alpha, 0.1);

        let near_done = EstimatorModel {
            anneal_alpha: 0.95,
            ..base
        };
        assert_eq!(innovate_model(&near_done, 0.1).anneal_alpha, 1.0);

        let mut model = base;
        for _ in 0..10 {
            model = innovate_model(&model, 0.1);
        }
        assert_eq!(model.anneal_alpha, 1.0);
    }

    #[test]
    fn history_is_deterministic_and_query_order_independent() {
        let w = world(1.0, 0.02, 3, 0.7);
        let mut forward = DamageHistory::new(w, 42);
        let mut scattered = DamageHistory::new(w, 42);
        let forward_vals: Vec<Money> = (0..30).map(|p| forward.value(0, p).unwrap()).collect();
        // Query out of order and interleave another vintage.
        scattered.value(0, 29).unwrap();
        scattered.value(7, 15).unwrap();
        let scattered_vals: Vec<Money> = (0..30).map(|p| scattered.value(0, p).unwrap()).collect();
        assert_eq!(forward_vals, scattered_vals);
    }

    #[test]
    fn noise_free_history_equals_correct_forecast() {
        let w = world(1.1, 0.05, 2, 0.0);
        let model = EstimatorModel {
            b2: 1.1,
            b4: 0.05,
            anneal_alpha: 0.0,
            calibration_window: 1,
        };
        let mut history = DamageHistory::new(w, 9);
        for period in 3..40 {
            assert_eq!(
                history.value(3, period).unwrap(),
                forecast_marginal_damage(&model, &w, 3, period).unwrap()
            );
        }
    }

    #[test]
    fn noise_is_mean_zero_within_monte_carlo_band() {
        let w = world(2.0, 0.0, 0, 1.5);
        let n = 10_000u32;
        let tau = 4;
        let mut sum = 0.0;
        for draw in 0..n {
            // Independent seeds give independent draws.
            let mut h = DamageHistory::new(w, 50_000 + draw as u64);
            sum += h.value(0, tau).unwrap().to_f64();
        }
        let mean = sum / n as f64;
        let analytic = w.true_mean(tau);
        let band = 4.0 * w.sigma / (n as f64).sqrt();
        assert!(
            (mean - analytic).abs() <= band,
            "sample mean {mean} outside {band} of {analytic}"
        );
    }
}
