//! Retroactive carbon-pricing mechanisms and baselines.
//!
//! The idealized variant settles every estimate revision directly between
//! polluters and the government. The insured variant auctions that exposure
//! to competing insurers at registration time: the polluter pays the initial
//! charge plus a one-off premium, and a swap contract hands all later
//! adjustment legs to the winning insurer. Baselines: a flat Pigouvian tax,
//! reserve requirements scaled from sector fine history, and the repo-style
//! voucher auction.

use crate::damage::{DamageWorld, EstimatorModel};
use crate::ledger::{AgentId, EntryReason, Ledger, LedgerError, Party, Year};
use crate::money::Money;
use crate::scc::{discounted_money_sum, EstimateTable, RetroAgencyRelease, SccError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::io;

/// Registered emissions of one polluter for one vintage year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmissionVintage {
    pub polluter: AgentId,
    pub vintage: Year,
    pub tonnes: u64,
}

/// Who stands on the other side of a swap contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Counterparty {
    Government,
    Exchange,
}

impl Counterparty {
    pub fn party(self) -> Party {
        match self {
            Counterparty::Government => Party::Government,
            Counterparty::Exchange => Party::Exchange,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwapStatus {
    Active,
    Matured,
    Defaulted,
}

/// Premium leg plus per-period adjustment leg between an insurer and the
/// government or the exchange.
///
/// The floating leg at time `t` is the vintage's adjustment times the
/// contracted tonnage, payable only while `vintage < t <= vintage + cap`
/// and the contract is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapContract {
    pub id: u64,
    pub insurer: AgentId,
    pub counterparty: Counterparty,
    pub vintage: Year,
    pub tonnes: u64,
    /// Fixed leg, paid once per tonne at inception.
    pub premium: Money,
    /// Years of adjustment exposure after the vintage.
    pub cap_horizon: Year,
    pub status: SwapStatus,
    /// Raw cumulative per-tonne adjustment since inception.
    pub cum_delta: Money,
    /// Cumulative per-tonne amount actually settled (post-floor).
    pub cum_settled: Money,
}

impl SwapContract {
    pub fn new(
        id: u64,
        insurer: AgentId,
        counterparty: Counterparty,
        vintage: Year,
        tonnes: u64,
        premium: Money,
        cap_horizon: Year,
    ) -> Self {
        SwapContract {
            id,
            insurer,
            counterparty,
            vintage,
            tonnes,
            premium,
            cap_horizon,
            status: SwapStatus::Active,
            cum_delta: Money::ZERO,
            cum_settled: Money::ZERO,
        }
    }

    /// Whether an adjustment leg is due at time `t`.
    pub fn leg_due(&self, t: Year) -> bool {
        self.status == SwapStatus::Active
            && t > self.vintage
            && t <= self.vintage + self.cap_horizon
    }
}

/// An insurer's standing offer to take over adjustment exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PremiumQuote {
    pub insurer: AgentId,
    pub vintage: Year,
    /// Premium per tonne, non-negative.
    pub premium: Money,
    pub volume: u64,
    /// Posting order, breaks premium ties.
    pub posted_at: u64,
}

/// One rung of an insurer's supply ladder: `volume` extra tonnes offered at
/// `markup` above its base quote. Non-decreasing markups make cumulative
/// offered volume non-decreasing in the premium received.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupplyRung {
    pub markup: Money,
    pub volume: u64,
}

/// Behavioural parameters of one insurer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsurerPolicy {
    pub model: EstimatorModel,
    /// Covers model innovation costs, per tonne.
    pub cost_margin: Money,
    pub profit_margin: Money,
    /// Supply ladder; a single zero-markup rung is the plain case.
    pub supply: Vec<SupplyRung>,
    /// Weight on the realized past loss rate added to quotes.
    pub solvency_sensitivity: f64,
}

impl InsurerPolicy {
    pub fn validate(&self) -> Result<(), String> {
        self.model.validate()?;
        if self.cost_margin.is_negative() || self.profit_margin.is_negative() {
            return Err("insurer margins must be non-negative".to_string());
        }
        if self.solvency_sensitivity < 0.0 || !self.solvency_sensitivity.is_finite() {
            return Err("solvency sensitivity must be finite and non-negative".to_string());
        }
        if self.supply.is_empty() {
            return Err("supply ladder must have at least one rung".to_string());
        }
        let mut last = Money::from_micros(i64::MIN);
        for rung in &self.supply {
            if rung.markup.is_negative() || rung.markup < last {
                return Err("supply markups must be non-negative and non-decreasing".to_string());
            }
            if rung.volume == 0 {
                return Err("supply rung volumes must be positive".to_string());
            }
            last = rung.markup;
        }
        Ok(())
    }
}

/// One step of a polluter's bid ladder: `volume` credits wanted up to
/// `price`. The implied cumulative demand is non-increasing in price by
/// construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandStep {
    pub price: Money,
    pub volume: u64,
}

/// Demand side of one polluter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolluterDemand {
    pub ladder: Vec<DemandStep>,
    /// Exogenous bankruptcy probability per year.
    pub default_hazard: f64,
}

impl PolluterDemand {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.default_hazard) {
            return Err(format!(
                "default hazard must lie in [0, 1], got {}",
                self.default_hazard
            ));
        }
        for step in &self.ladder {
            if step.price.is_negative() {
                return Err("demand prices must be non-negative".to_string());
            }
            if step.volume == 0 {
                return Err("demand volumes must be positive".to_string());
            }
        }
        Ok(())
    }

    /// Total volume demanded at a given unit price.
    pub fn demand_at(&self, price: Money) -> u64 {
        self.ladder
            .iter()
            .filter(|step| step.price >= price)
            .map(|step| step.volume)
            .sum()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MechanismError {
    #[error("agency release does not cover vintage {vintage} at time {time}")]
    AgencyCoverage { vintage: Year, time: Year },
    #[error("contract {contract} is {status:?}, cannot settle")]
    Lifecycle { contract: u64, status: SwapStatus },
    #[error("no premium quotes with positive volume")]
    NoQuotes,
    #[error("sector history window of {window} years is missing data at time {time}")]
    HistoryWindow { window: u32, time: Year },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Scc(#[from] SccError),
}

/// One cash movement in a settlement report. Mirrors the ledger entry it
/// produced, tagged with the swap contract when one is involved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SettlementRecord {
    pub time: Year,
    pub payer: Party,
    pub payee: Party,
    pub amount: Money,
    pub contract: Option<u64>,
    /// Emission vintage the flow is attributable to, when there is one.
    pub vintage: Option<Year>,
    pub reason: EntryReason,
}

/// Outcome of one mechanism step.
#[derive(Debug, Clone, Default)]
pub struct SettlementReport {
    pub records: Vec<SettlementRecord>,
    /// Polluter obligations that bankrupt polluters never paid.
    pub shortfall_accrued: Money,
    /// Swap obligations left uncovered after cash and reserves.
    pub counterparty_losses: Money,
    /// Insurers that went insolvent during this step.
    pub insurer_defaults: Vec<AgentId>,
    /// Registrations (or remainders) no quote could absorb.
    pub unmet: Vec<EmissionVintage>,
}

impl SettlementReport {
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        ledger: &mut Ledger,
        time: Year,
        payer: Party,
        payee: Party,
        amount: Money,
        contract: Option<u64>,
        vintage: Option<Year>,
        reason: EntryReason,
    ) -> Result<(), MechanismError> {
        if !amount.is_positive() {
            return Ok(());
        }
        ledger.transfer(time, payer, payee, amount, reason)?;
        self.records.push(SettlementRecord {
            time,
            payer,
            payee,
            amount,
            contract,
            vintage,
            reason,
        });
        Ok(())
    }

    pub fn merge(&mut self, other: SettlementReport) {
        self.records.extend(other.records);
        self.shortfall_accrued += other.shortfall_accrued;
        self.counterparty_losses += other.counterparty_losses;
        self.insurer_defaults.extend(other.insurer_defaults);
        self.unmet.extend(other.unmet);
    }

    /// Export with the fixed column order
    /// `time,payer,payee,amount,contract_id,reason_code`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "time",
            "payer",
            "payee",
            "amount",
            "contract_id",
            "reason_code",
        ])?;
        for r in &self.records {
            w.write_record([
                r.time.to_string(),
                r.payer.to_string(),
                r.payee.to_string(),
                r.amount.to_decimal_string(),
                r.contract.map(|c| c.to_string()).unwrap_or_default(),
                r.reason.code().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How a vintage-present-value amount converts into cash at settlement
/// time: unchanged under present-value settlement, compounded forward to
/// the payment date under nominal settlement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SettlementBasis {
    #[default]
    PresentValue,
    Nominal,
}

impl SettlementBasis {
    pub fn cash_amount(
        self,
        per_tonne: Money,
        vintage: Year,
        t: Year,
        discount_rate: f64,
    ) -> Money {
        match self {
            SettlementBasis::PresentValue => per_tonne,
            SettlementBasis::Nominal => Money::from_f64(
                per_tonne.to_f64() * (1.0 + discount_rate).powi((t - vintage) as i32),
            ),
        }
    }
}

/// Idealized retroactive taxation: new vintages pay the current estimate up
/// front, prior vintages settle their adjustment directly with the
/// government, and obligations of bankrupt polluters accrue to the
/// shortfall sink.
#[allow(clippy::too_many_arguments)]
pub fn idealized_recap_step(
    t: Year,
    new_registrations: &[EmissionVintage],
    active: &[EmissionVintage],
    bankrupt: &HashSet<AgentId>,
    release: &RetroAgencyRelease,
    table: &EstimateTable,
    basis: SettlementBasis,
    discount_rate: f64,
    ledger: &mut Ledger,
) -> Result<SettlementReport, MechanismError> {
    let mut report = SettlementReport::default();
    for registration in new_registrations {
        debug_assert_eq!(registration.vintage, t);
        let estimate =
            release
                .estimate_for(registration.vintage)
                .ok_or(MechanismError::AgencyCoverage {
                    vintage: registration.vintage,
                    time: t,
                })?;
        report.record(
            ledger,
            t,
            Party::Agent(registration.polluter),
            Party::Government,
            estimate.value * registration.tonnes,
            None,
            Some(registration.vintage),
            EntryReason::InitialTax,
        )?;
    }
    for position in active {
        debug_assert!(position.vintage < t);
        let current =
            release
                .estimate_for(position.vintage)
                .ok_or(MechanismError::AgencyCoverage {
                    vintage: position.vintage,
                    time: t,
                })?;
        let previous =
            table
                .get(position.vintage, t - 1)
                .ok_or(MechanismError::AgencyCoverage {
                    vintage: position.vintage,
                    time: t,
                })?;
        let delta = current.value - previous.value;
        let per_tonne = basis.cash_amount(delta, position.vintage, t, discount_rate);
        let polluter = Party::Agent(position.polluter);
        if bankrupt.contains(&position.polluter) {
            if per_tonne.is_positive() {
                let unpaid = per_tonne * position.tonnes;
                report.record(
                    ledger,
                    t,
                    Party::ShortfallSink,
                    Party::Government,
                    unpaid,
                    None,
                    Some(position.vintage),
                    EntryReason::Shortfall,
                )?;
                report.shortfall_accrued += unpaid;
            }
        } else if per_tonne.is_positive() {
            report.record(
                ledger,
                t,
                polluter,
                Party::Government,
                per_tonne * position.tonnes,
                None,
                Some(position.vintage),
                EntryReason::SwapLeg,
            )?;
        } else if per_tonne.is_negative() {
            report.record(
                ledger,
                t,
                Party::Government,
                polluter,
                (-per_tonne) * position.tonnes,
                None,
                Some(position.vintage),
                EntryReason::Refund,
            )?;
        }
    }
    Ok(report)
}

/// One registration's share of an insurer's quote.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuoteAssignment {
    pub polluter: AgentId,
    pub vintage: Year,
    pub insurer: AgentId,
    pub tonnes: u64,
    pub premium: Money,
}

/// Match registrations to the cheapest available premium quotes.
///
/// Quotes are consumed lowest premium first, earlier posting breaking ties,
/// splitting registrations across quotes when needed. Registrations the
/// aggregate quoted volume cannot absorb come back as the unmet remainder
/// for idealized treatment.
pub fn insured_recap_auction(
    registrations: &[EmissionVintage],
    quotes: &[PremiumQuote],
) -> Result<(Vec<QuoteAssignment>, Vec<EmissionVintage>), MechanismError> {
    if !quotes.iter().any(|q| q.volume > 0) {
        return Err(MechanismError::NoQuotes);
    }
    let mut order: Vec<usize> = (0..quotes.len())
        .filter(|i| quotes[*i].volume > 0)
        .collect();
    order.sort_by_key(|i| (quotes[*i].premium, quotes[*i].posted_at));
    let mut remaining: Vec<u64> = quotes.iter().map(|q| q.volume).collect();
    let mut cursor = 0usize;
    let mut assignments = Vec::new();
    let mut unmet = Vec::new();
    for registration in registrations {
        let mut wanted = registration.tonnes;
        while wanted > 0 && cursor < order.len() {
            let qi = order[cursor];
            if remaining[qi] == 0 {
                cursor += 1;
                continue;
            }
            let take = wanted.min(remaining[qi]);
            remaining[qi] -= take;
            wanted -= take;
            assignments.push(QuoteAssignment {
                polluter: registration.polluter,
                vintage: registration.vintage,
                insurer: quotes[qi].insurer,
                tonnes: take,
                premium: quotes[qi].premium,
            });
        }
        if wanted > 0 {
            unmet.push(EmissionVintage {
                polluter: registration.polluter,
                vintage: registration.vintage,
                tonnes: wanted,
            });
        }
    }
    Ok((assignments, unmet))
}

/// Settle the cash legs of an insured registration round: the polluter pays
/// the initial charge to the government and the premium to its insurer, and
/// each assignment opens a swap with the government as counterparty.
pub fn apply_insured_assignments(
    t: Year,
    assignments: &[QuoteAssignment],
    release: &RetroAgencyRelease,
    cap_horizon: Year,
    next_contract_id: &mut u64,
    ledger: &mut Ledger,
) -> Result<(Vec<SwapContract>, SettlementReport), MechanismError> {
    let mut report = SettlementReport::default();
    let mut contracts = Vec::with_capacity(assignments.len());
    for assignment in assignments {
        let estimate =
            release
                .estimate_for(assignment.vintage)
                .ok_or(MechanismError::AgencyCoverage {
                    vintage: assignment.vintage,
                    time: t,
                })?;
        let id = *next_contract_id;
        *next_contract_id += 1;
        report.record(
            ledger,
            t,
            Party::Agent(assignment.polluter),
            Party::Government,
            estimate.value * assignment.tonnes,
            Some(id),
            Some(assignment.vintage),
            EntryReason::InitialTax,
        )?;
        report.record(
            ledger,
            t,
            Party::Agent(assignment.polluter),
            Party::Agent(assignment.insurer),
            assignment.premium * assignment.tonnes,
            Some(id),
            Some(assignment.vintage),
            EntryReason::Premium,
        )?;
        contracts.push(SwapContract::new(
            id,
            assignment.insurer,
            Counterparty::Government,
            assignment.vintage,
            assignment.tonnes,
            assignment.premium,
            cap_horizon,
        ));
    }
    Ok((contracts, report))
}

/// Settle the adjustment leg of a single contract at time `t`.
///
/// `floor` clamps the cumulative per-tonne adjustment from below before any
/// cash moves. An insurer that cannot cover a positive leg pays what it has,
/// then its posted reserve, and the rest lands on the bailout sink as a
/// counterparty loss; the contract defaults. Settling a matured or
/// defaulted contract is a lifecycle error.
#[allow(clippy::too_many_arguments)]
pub fn settle_swap_leg(
    t: Year,
    contract: &mut SwapContract,
    table: &EstimateTable,
    floor: Option<Money>,
    basis: SettlementBasis,
    discount_rate: f64,
    ledger: &mut Ledger,
    report: &mut SettlementReport,
) -> Result<(), MechanismError> {
    if contract.status != SwapStatus::Active {
        return Err(MechanismError::Lifecycle {
            contract: contract.id,
            status: contract.status,
        });
    }
    if t > contract.vintage + contract.cap_horizon {
        contract.status = SwapStatus::Matured;
        return Ok(());
    }
    debug_assert!(t > contract.vintage, "leg before first settlement year");
    let delta = table
        .adjustment(contract.vintage, t)
        .ok_or(MechanismError::AgencyCoverage {
            vintage: contract.vintage,
            time: t,
        })?
        .delta;
    contract.cum_delta += delta;
    let target = match floor {
        Some(f) => contract.cum_delta.max(f),
        None => contract.cum_delta,
    };
    let per_tonne = target - contract.cum_settled;
    contract.cum_settled = target;
    let cash_per_tonne = basis.cash_amount(per_tonne, contract.vintage, t, discount_rate);
    let amount = cash_per_tonne.abs() * contract.tonnes;
    if amount.is_zero() {
        return Ok(());
    }
    let insurer_party = Party::Agent(contract.insurer);
    let counterparty = contract.counterparty.party();
    if cash_per_tonne.is_negative() {
        // Counterparty owes the insurer.
        report.record(
            ledger,
            t,
            counterparty,
            insurer_party,
            amount,
            Some(contract.id),
            Some(contract.vintage),
            EntryReason::Refund,
        )?;
        return Ok(());
    }
    let cash = ledger.balance_of(&insurer_party).max(Money::ZERO);
    if cash >= amount {
        report.record(
            ledger,
            t,
            insurer_party,
            counterparty,
            amount,
            Some(contract.id),
            Some(contract.vintage),
            EntryReason::SwapLeg,
        )?;
        return Ok(());
    }
    // Default path: cash, then reserve, then the bailout sink.
    report.record(
        ledger,
        t,
        insurer_party,
        counterparty,
        cash,
        Some(contract.id),
        Some(contract.vintage),
        EntryReason::SwapLeg,
    )?;
    let mut outstanding = amount - cash;
    let reserve_party = Party::Reserve(contract.insurer);
    let reserve = ledger.balance_of(&reserve_party).max(Money::ZERO);
    let from_reserve = reserve.min(outstanding);
    report.record(
        ledger,
        t,
        reserve_party,
        counterparty,
        from_reserve,
        Some(contract.id),
        Some(contract.vintage),
        EntryReason::Reserve,
    )?;
    outstanding -= from_reserve;
    if outstanding.is_positive() {
        report.record(
            ledger,
            t,
            Party::BailoutLossSink,
            counterparty,
            outstanding,
            Some(contract.id),
            Some(contract.vintage),
            EntryReason::BailoutLoss,
        )?;
        report.counterparty_losses += outstanding;
    }
    contract.status = SwapStatus::Defaulted;
    report.insurer_defaults.push(contract.insurer);
    Ok(())
}

/// Settle all active contracts for time `t`, in contract-id order.
///
/// Once an insurer defaults, its remaining active contracts neither pay nor
/// collect: pending legs are not enacted in either direction and every
/// contract of that insurer is marked defaulted.
pub fn settle_swaps(
    t: Year,
    contracts: &mut [SwapContract],
    table: &EstimateTable,
    floor: Option<Money>,
    basis: SettlementBasis,
    discount_rate: f64,
    ledger: &mut Ledger,
) -> Result<SettlementReport, MechanismError> {
    let mut report = SettlementReport::default();
    let mut dead: HashSet<AgentId> = HashSet::new();
    for contract in contracts.iter_mut() {
        if contract.status == SwapStatus::Active && t > contract.vintage + contract.cap_horizon {
            contract.status = SwapStatus::Matured;
            continue;
        }
        if !contract.leg_due(t) {
            continue;
        }
        if dead.contains(&contract.insurer) {
            continue;
        }
        settle_swap_leg(
            t,
            contract,
            table,
            floor,
            basis,
            discount_rate,
            ledger,
            &mut report,
        )?;
        if contract.status == SwapStatus::Defaulted {
            dead.insert(contract.insurer);
        }
    }
    if !dead.is_empty() {
        for contract in contracts.iter_mut() {
            if contract.status == SwapStatus::Active && dead.contains(&contract.insurer) {
                contract.status = SwapStatus::Defaulted;
            }
        }
    }
    Ok(report)
}

/// Flat Pigouvian tax: one charge per new vintage, never adjusted.
pub fn baseline_fixed_tax(
    t: Year,
    registrations: &[EmissionVintage],
    tax_rate: Money,
    ledger: &mut Ledger,
) -> Result<SettlementReport, MechanismError> {
    let mut report = SettlementReport::default();
    for registration in registrations {
        report.record(
            ledger,
            t,
            Party::Agent(registration.polluter),
            Party::Government,
            tax_rate * registration.tonnes,
            None,
            Some(registration.vintage),
            EntryReason::InitialTax,
        )?;
    }
    Ok(report)
}

pub type SectorId = u32;
pub type ScaleLevel = u32;

/// Per-sector fine and GDP history backing the reserves baseline.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SectorHistory {
    fines: BTreeMap<(SectorId, ScaleLevel, Year), Money>,
    gdp: BTreeMap<(SectorId, Year), f64>,
}

impl SectorHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_fine(&mut self, sector: SectorId, scale: ScaleLevel, year: Year, fine: Money) {
        self.fines.insert((sector, scale, year), fine);
    }

    pub fn record_gdp(&mut self, sector: SectorId, year: Year, gdp: f64) {
        self.gdp.insert((sector, year), gdp);
    }

    pub fn fine(&self, sector: SectorId, scale: ScaleLevel, year: Year) -> Option<Money> {
        self.fines.get(&(sector, scale, year)).copied()
    }

    pub fn gdp(&self, sector: SectorId, year: Year) -> Option<f64> {
        self.gdp.get(&(sector, year)).copied()
    }
}

/// Reserve requirement: the reserve rate times the `window`-year average of
/// GDP-readjusted fines paid by similar companies,
/// `r * (1/m) * sum_j GDP(s, t) * Fine(s, sc, t - j) / GDP(s, t - j)`.
pub fn baseline_reserves_for_pollution(
    history: &SectorHistory,
    sector: SectorId,
    scale: ScaleLevel,
    t: Year,
    reserve_rate: f64,
    window: u32,
) -> Result<Money, MechanismError> {
    assert!(window > 0, "reserve window must be positive");
    let gap = || MechanismError::HistoryWindow { window, time: t };
    if t < window {
        return Err(gap());
    }
    let gdp_now = history.gdp(sector, t).ok_or_else(gap)?;
    let mut total = 0.0;
    for j in 1..=window {
        let year = t - j;
        let fine = history.fine(sector, scale, year).ok_or_else(gap)?;
        let gdp_then = history.gdp(sector, year).ok_or_else(gap)?;
        total += gdp_now * fine.to_f64() / gdp_then;
    }
    Ok(Money::from_f64(reserve_rate * total / window as f64))
}

/// Move only the difference between the posted reserve and the new
/// requirement (the retreat-more-fill-less re-adjustment).
pub fn adjust_reserve(
    t: Year,
    company: AgentId,
    requirement: Money,
    ledger: &mut Ledger,
) -> Result<Option<SettlementRecord>, MechanismError> {
    let reserve_party = Party::Reserve(company);
    let posted = ledger.balance_of(&reserve_party);
    let diff = requirement - posted;
    let record = if diff.is_positive() {
        Some(SettlementRecord {
            time: t,
            payer: Party::Agent(company),
            payee: reserve_party,
            amount: diff,
            contract: None,
            vintage: None,
            reason: EntryReason::Reserve,
        })
    } else if diff.is_negative() {
        Some(SettlementRecord {
            time: t,
            payer: reserve_party,
            payee: Party::Agent(company),
            amount: -diff,
            contract: None,
            vintage: None,
            reason: EntryReason::Reserve,
        })
    } else {
        None
    };
    if let Some(r) = record {
        ledger.transfer(r.time, r.payer, r.payee, r.amount, r.reason)?;
    }
    Ok(record)
}

/// A voucher holder's sealed repo bid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoucherBid {
    pub holder: AgentId,
    pub bid: Money,
    pub volume: u64,
}

/// Repo auction with a hidden upper bound: a bid executes exactly when it is
/// strictly below the bound; bids at the bound are rejected.
pub fn baseline_vpdollar_auction(bids: &[VoucherBid], upper_bound: Money) -> Vec<VoucherBid> {
    assert!(upper_bound.is_positive(), "upper bound must be positive");
    bids.iter()
        .copied()
        .filter(|b| b.bid < upper_bound)
        .collect()
}

/// Execute accepted repo bids: the government buys each accepted holder's
/// vouchers back at the holder's own bid.
pub fn apply_vpdollar_repo(
    t: Year,
    accepted: &[VoucherBid],
    ledger: &mut Ledger,
) -> Result<SettlementReport, MechanismError> {
    let mut report = SettlementReport::default();
    for bid in accepted {
        report.record(
            ledger,
            t,
            Party::Government,
            Party::Agent(bid.holder),
            bid.bid * bid.volume,
            None,
            None,
            EntryReason::Trade,
        )?;
    }
    Ok(report)
}

/// The insurer's model-implied total future adjustment for a vintage, per
/// tonne: its own predicted estimate path out to the cap, minus the released
/// initial estimate.
///
/// Built from the same period-ordered discounted sum as the agency's
/// estimates, so a correctly specified insurer in a noise-free world prices
/// the oracle-minus-initial gap exactly.
pub fn expected_total_adjustment(
    insurer_model: &EstimatorModel,
    agency_model: &EstimatorModel,
    world: &DamageWorld,
    vintage: Year,
    initial_estimate: Money,
    cap_horizon: Year,
) -> Money {
    let boundary = world.horizon.min(vintage + cap_horizon);
    let mut per_period = Vec::with_capacity((world.horizon - vintage + 1) as usize);
    for period in vintage..=world.horizon {
        let model = if period <= boundary {
            insurer_model
        } else {
            agency_model
        };
        let value = crate::damage::forecast_marginal_damage(model, world, vintage, period)
            .expect("period >= vintage by construction");
        per_period.push(value);
    }
    let predicted_final = Money::from_f64(discounted_money_sum(per_period, world.discount_rate));
    predicted_final - initial_estimate
}

/// Quote rule: predicted total adjustment plus margins plus the
/// solvency-driven bump `k * realized past loss rate`, floored at zero.
pub fn quote_premium(
    policy: &InsurerPolicy,
    predicted_adjustment: Money,
    realized_loss_per_tonne: Money,
) -> Money {
    let bump = Money::from_f64(policy.solvency_sensitivity * realized_loss_per_tonne.to_f64());
    (predicted_adjustment + policy.cost_margin + policy.profit_margin + bump).max(Money::ZERO)
}
