//! Scenario configuration: a versioned JSON schema binding every free
//! parameter of a run.
//!
//! Money-valued fields are plain currency amounts (`40.0` means forty
//! dollars per tonne) and are quantized to fixed point on use. Defaults are
//! explicit in the serde attributes; nothing is silently assumed.

use crate::damage::{DamageWorld, EstimatorModel};
use crate::ledger::Year;
use crate::mechanisms::SettlementBasis;
use crate::money::Money;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismKind {
    IdealizedRecap,
    InsuredRecap,
    Precap,
    FixedTax,
    Reserves,
    Vpdollar,
}

impl MechanismKind {
    pub fn label(self) -> &'static str {
        match self {
            MechanismKind::IdealizedRecap => "idealized-recap",
            MechanismKind::InsuredRecap => "insured-recap",
            MechanismKind::Precap => "precap",
            MechanismKind::FixedTax => "fixed-tax",
            MechanismKind::Reserves => "reserves",
            MechanismKind::Vpdollar => "vpdollar",
        }
    }
}

/// Retro-agency behaviour: estimate window plus model evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgencyConfig {
    /// Vintages covered by each release besides the newest. The default of
    /// ten is an arbitrary but explicit choice; settlement correctness does
    /// not depend on it because adjustments are read from the estimate
    /// table, which covers every tracked vintage.
    #[serde(default = "default_window")]
    pub window: u32,
    pub model: EstimatorModel,
    /// Annealing speed per year once innovation starts.
    #[serde(default)]
    pub anneal_rate: f64,
    /// Calendar year the agency starts annealing its model, if ever.
    #[serde(default)]
    pub anneal_start: Option<Year>,
    /// Refit believed coefficients on the calibration window each year.
    #[serde(default)]
    pub refit: bool,
}

fn default_window() -> u32 {
    10
}

/// One step of a bid ladder, in currency units per credit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidStep {
    pub price: f64,
    pub volume: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolluterConfig {
    /// Tonnes registered (or credits demanded) per year.
    pub tonnes_per_year: u64,
    /// Exogenous bankruptcy probability per year.
    #[serde(default)]
    pub default_hazard: f64,
    #[serde(default)]
    pub initial_cash: f64,
    /// Exchange bid ladder for private-market runs.
    #[serde(default)]
    pub bids: Vec<BidStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupplyRungConfig {
    pub markup: f64,
    pub volume: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsurerConfig {
    pub model: EstimatorModel,
    #[serde(default)]
    pub cost_margin: f64,
    #[serde(default)]
    pub profit_margin: f64,
    /// Tonnes (or credits) offered at the base quote each year.
    pub supply_volume: u64,
    /// Optional extra rungs above the base quote.
    #[serde(default)]
    pub supply_markups: Vec<SupplyRungConfig>,
    #[serde(default)]
    pub initial_cash: f64,
    /// Reserve posted up front into the default fund.
    #[serde(default)]
    pub default_fund: f64,
    /// Weight on the realized past loss rate added to quotes.
    #[serde(default = "default_solvency_sensitivity")]
    pub solvency_sensitivity: f64,
}

fn default_solvency_sensitivity() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplierConfig {
    /// Credits minted and listed per year.
    pub credits_per_year: u64,
    pub ask_price: f64,
    /// Fraction of minted credits flagged as breakthrough technology.
    #[serde(default)]
    pub breakthrough_fraction: f64,
    /// Ask for breakthrough credits; defaults to the plain ask.
    #[serde(default)]
    pub breakthrough_ask_price: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentsConfig {
    #[serde(default)]
    pub polluters: Vec<PolluterConfig>,
    #[serde(default)]
    pub insurers: Vec<InsurerConfig>,
    #[serde(default)]
    pub suppliers: Vec<SupplierConfig>,
}

/// Market-mechanism parameters shared by the swap-based mechanisms and the
/// exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    /// Years of adjustment exposure per swap contract.
    #[serde(default = "default_cap_horizon")]
    pub cap_horizon: Year,
    /// Minimum breakthrough fraction of every buyer basket.
    #[serde(default = "default_breakthrough_quota")]
    pub breakthrough_quota: f64,
    /// Price cap on breakthrough credits.
    #[serde(default = "default_scc_cap")]
    pub scc_cap: f64,
    /// Floor on cumulative per-contract adjustments (exchange runs).
    #[serde(default)]
    pub adjustment_floor: Option<f64>,
    #[serde(default)]
    pub settlement: SettlementBasis,
    /// Artificial demand the exchange itself posts each round.
    #[serde(default)]
    pub exchange_bids: Vec<BidStep>,
    /// Voluntary-participation toggle: the fraction of each buyer's bid
    /// ladder actually routed to the exchange.
    #[serde(default = "default_participation")]
    pub participation_rate: f64,
}

fn default_participation() -> f64 {
    1.0
}

fn default_cap_horizon() -> Year {
    30
}

fn default_breakthrough_quota() -> f64 {
    0.1
}

fn default_scc_cap() -> f64 {
    100.0
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            cap_horizon: default_cap_horizon(),
            breakthrough_quota: default_breakthrough_quota(),
            scc_cap: default_scc_cap(),
            adjustment_floor: None,
            settlement: SettlementBasis::default(),
            exchange_bids: Vec::new(),
            participation_rate: default_participation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineSeriesConfig {
    pub scale: u32,
    /// Fine per year, starting at year 0.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorSeriesConfig {
    pub sector: u32,
    /// GDP per year, starting at year 0.
    pub gdp: Vec<f64>,
    pub fines: Vec<FineSeriesConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompanyConfig {
    pub sector: u32,
    pub scale: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservesConfig {
    pub reserve_rate: f64,
    pub window: u32,
    pub sectors: Vec<SectorSeriesConfig>,
    /// One entry per polluter, mapping it to a sector and scale level.
    pub companies: Vec<CompanyConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoucherHolderConfig {
    pub base_bid: f64,
    /// Uniform jitter half-width applied to each year's bid.
    #[serde(default)]
    pub jitter: f64,
    pub volume: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpdollarConfig {
    /// Hidden repo upper bound.
    pub upper_bound: f64,
    pub holders: Vec<VoucherHolderConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Flat tax rate per tonne. The 40/t default mirrors the common
    /// corporate stress-testing value.
    #[serde(default = "default_fixed_tax")]
    pub fixed_tax_rate: f64,
    #[serde(default)]
    pub reserves: Option<ReservesConfig>,
    #[serde(default)]
    pub vpdollar: Option<VpdollarConfig>,
}

fn default_fixed_tax() -> f64 {
    40.0
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            fixed_tax_rate: default_fixed_tax(),
            reserves: None,
            vpdollar: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub mechanism: MechanismKind,
    pub world: DamageWorld,
    pub agency: AgencyConfig,
    #[serde(default)]
    pub agents: AgentsConfig,
    #[serde(default)]
    pub market: MarketConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    /// Run length in settlement years; the run simulates `0..years`.
    pub years: Year,
    /// Default seed list for sweeps.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, thiserror::Error)]
#[error("invalid scenario config: {0}")]
pub struct ConfigError(pub String);

impl ScenarioConfig {
    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig =
            serde_json::from_str(json).map_err(|e| ConfigError(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError(msg));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return fail("name must be non-empty and filename-safe".into());
        }
        self.world.validate().map_err(ConfigError)?;
        if self.years > self.world.horizon {
            return fail(format!(
                "years {} exceeds world horizon {}",
                self.years, self.world.horizon
            ));
        }
        self.agency.model.validate().map_err(ConfigError)?;
        if self.agency.anneal_rate < 0.0 || !self.agency.anneal_rate.is_finite() {
            return fail("agency anneal_rate must be finite and non-negative".into());
        }
        for (i, p) in self.agents.polluters.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.default_hazard) {
                return fail(format!("polluter {i} default_hazard outside [0, 1]"));
            }
            for step in &p.bids {
                if step.price < 0.0 || step.volume == 0 {
                    return fail(format!("polluter {i} has an invalid bid step"));
                }
            }
        }
        for (i, insurer) in self.agents.insurers.iter().enumerate() {
            self.insurer_policy(insurer)
                .validate()
                .map_err(|e| ConfigError(format!("insurer {i}: {e}")))?;
            if insurer.default_fund < 0.0 || insurer.initial_cash < 0.0 {
                return fail(format!("insurer {i} cash and fund must be non-negative"));
            }
        }
        for (i, s) in self.agents.suppliers.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.breakthrough_fraction) {
                return fail(format!("supplier {i} breakthrough_fraction outside [0, 1]"));
            }
            if s.ask_price < 0.0 || s.breakthrough_ask_price.is_some_and(|p| p < 0.0) {
                return fail(format!("supplier {i} ask prices must be non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.market.breakthrough_quota) {
            return fail("breakthrough_quota must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.market.participation_rate) {
            return fail("participation_rate must lie in [0, 1]".into());
        }
        if self.market.scc_cap < 0.0 {
            return fail("scc_cap must be non-negative".into());
        }
        if self.market.cap_horizon == 0 {
            return fail("cap_horizon must be positive".into());
        }
        match self.mechanism {
            MechanismKind::InsuredRecap => {
                if self.agents.insurers.is_empty() {
                    return fail("insured-recap needs at least one insurer".into());
                }
                if self.agents.polluters.is_empty() {
                    return fail("insured-recap needs at least one polluter".into());
                }
            }
            MechanismKind::IdealizedRecap | MechanismKind::FixedTax => {
                if self.agents.polluters.is_empty() {
                    return fail(format!(
                        "{} needs at least one polluter",
                        self.mechanism.label()
                    ));
                }
            }
            MechanismKind::Precap => {
                if self.agents.suppliers.is_empty() || self.agents.insurers.is_empty() {
                    return fail("precap needs at least one supplier and one insurer".into());
                }
            }
            MechanismKind::Reserves => {
                let Some(reserves) = &self.baseline.reserves else {
                    return fail("reserves mechanism needs baseline.reserves".into());
                };
                if reserves.window == 0 {
                    return fail("reserves window must be positive".into());
                }
                if reserves.companies.len() != self.agents.polluters.len() {
                    return fail("reserves needs one company entry per polluter".into());
                }
                let needed = self.years as usize;
                for sector in &reserves.sectors {
                    if sector.gdp.len() < needed {
                        return fail(format!(
                            "sector {} gdp series shorter than the run",
                            sector.sector
                        ));
                    }
                    for fine in &sector.fines {
                        if fine.values.len() < needed {
                            return fail(format!(
                                "sector {} scale {} fine series shorter than the run",
                                sector.sector, fine.scale
                            ));
                        }
                    }
                }
            }
            MechanismKind::Vpdollar => {
                let Some(vp) = &self.baseline.vpdollar else {
                    return fail("vpdollar mechanism needs baseline.vpdollar".into());
                };
                if vp.upper_bound <= 0.0 {
                    return fail("vpdollar upper_bound must be positive".into());
                }
                if vp.holders.is_empty() {
                    return fail("vpdollar needs at least one holder".into());
                }
            }
        }
        Ok(())
    }

    pub fn insurer_policy(&self, insurer: &InsurerConfig) -> crate::mechanisms::InsurerPolicy {
        let mut supply = vec![crate::mechanisms::SupplyRung {
            markup: Money::ZERO,
            volume: insurer.supply_volume,
        }];
        supply.extend(
            insurer
                .supply_markups
                .iter()
                .map(|r| crate::mechanisms::SupplyRung {
                    markup: Money::from_f64(r.markup),
                    volume: r.volume,
                }),
        );
        crate::mechanisms::InsurerPolicy {
            model: insurer.model,
            cost_margin: Money::from_f64(insurer.cost_margin),
            profit_margin: Money::from_f64(insurer.profit_margin),
            supply,
            solvency_sensitivity: insurer.solvency_sensitivity,
        }
    }

    pub fn agency_schedule(&self) -> crate::scc::AgencySchedule {
        crate::scc::AgencySchedule {
            base_model: self.agency.model,
            anneal_rate: self.agency.anneal_rate,
            anneal_start: self.agency.anneal_start,
            refit: self.agency.refit,
        }
    }
}
