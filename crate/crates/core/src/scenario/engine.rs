//! The deterministic run loop.
//!
//! One year advances as: bankruptcy hazards draw, damages realize, the
//! agency evaluates and releases estimates, the configured mechanism
//! settles, the ledger is audited, and metrics append. Everything is a pure
//! function of `(config, seed)`.

use crate::damage::{DamageError, DamageHistory};
use crate::exchange::{
    apply_trades, clear_auction, extract_scc_signal, settle_exchange_swaps, CreditRegistry,
    ExchangeError, ExchangeRiskState, Order, OrderBook, OrderSide, SccSignal, Trade,
};
use crate::ledger::{AgentId, AuditFailure, EntryReason, Ledger, LedgerError, Party, Year};
use crate::mechanisms::{
    adjust_reserve, apply_insured_assignments, apply_vpdollar_repo, baseline_fixed_tax,
    baseline_reserves_for_pollution, baseline_vpdollar_auction, expected_total_adjustment,
    idealized_recap_step, insured_recap_auction, quote_premium, settle_swaps, EmissionVintage,
    InsurerPolicy, MechanismError, PremiumQuote, SectorHistory, SettlementBasis, SettlementReport,
    SwapContract, VoucherBid,
};
use crate::money::Money;
use crate::rng::{stream_rng, StreamDomain};
use crate::scc::{
    estimate_scc, retro_agency_release, true_scc_oracle, AgencySchedule, EstimateTable,
    RetroAgencyRelease, SccError,
};
use crate::scenario::config::{MechanismKind, ScenarioConfig};
use crate::scenario::metrics::{premium_quantiles, RunMetrics};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, HashSet};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] crate::scenario::config::ConfigError),
    #[error("ledger audit failed in year {year}: {failure}")]
    Audit { year: Year, failure: AuditFailure },
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Scc(#[from] SccError),
    #[error(transparent)]
    Damage(#[from] DamageError),
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("run with seed {seed} failed: {source}")]
    SeededRun {
        seed: u64,
        source: Box<ScenarioError>,
    },
}

/// One exchange round's inputs and outputs, kept for JSON export and
/// invariant checks.
#[derive(Debug, Clone)]
pub struct RoundData {
    pub time: Year,
    pub orders: Vec<Order>,
    pub trades: Vec<Trade>,
    pub swaps_created: Vec<SwapContract>,
    pub signal: Option<SccSignal>,
}

/// Everything a finished run exposes.
#[derive(Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub ledger: Ledger,
    pub estimates: EstimateTable,
    pub contracts: Vec<SwapContract>,
    pub reports: Vec<SettlementReport>,
    pub rounds: Vec<RoundData>,
    /// Per-tonne true SCC per registered (or conversion) vintage.
    pub oracles: BTreeMap<Year, Money>,
}

struct PolluterState {
    id: AgentId,
    alive: bool,
    tonnes_per_year: u64,
    default_hazard: f64,
    bids: Vec<(Money, u64)>,
    hazard_rng: ChaCha8Rng,
}

struct InsurerState {
    id: AgentId,
    policy: InsurerPolicy,
    tonnes_insured: u64,
    swap_paid: Money,
    swap_received: Money,
    premium_income: Money,
    defaulted: bool,
}

impl InsurerState {
    /// Realized past loss rate per insured tonne: claims paid net of claims
    /// received, ignoring premium income (burning-cost convention).
    fn realized_loss_per_tonne(&self) -> Money {
        if self.tonnes_insured == 0 {
            return Money::ZERO;
        }
        let net = (self.swap_paid - self.swap_received).max(Money::ZERO);
        Money::from_micros(net.micros() / self.tonnes_insured as i64)
    }

    fn absorb_settlements(&mut self, report: &SettlementReport) {
        let me = Party::Agent(self.id);
        let my_reserve = Party::Reserve(self.id);
        for record in &report.records {
            match record.reason {
                EntryReason::SwapLeg if record.payer == me => {
                    self.swap_paid += record.amount;
                }
                // Reserve draws covering a default are the insurer's money.
                EntryReason::Reserve if record.payer == my_reserve => {
                    self.swap_paid += record.amount;
                }
                EntryReason::Refund if record.payee == me => {
                    self.swap_received += record.amount;
                }
                _ => {}
            }
        }
        if report.insurer_defaults.contains(&self.id) {
            self.defaulted = true;
        }
    }
}

struct Engine<'a> {
    config: &'a ScenarioConfig,
    basis: SettlementBasis,
    ledger: Ledger,
    history: DamageHistory,
    schedule: AgencySchedule,
    table: EstimateTable,
    tracked_vintages: BTreeSet<Year>,
    contracts: Vec<SwapContract>,
    next_contract_id: u64,
    registry: CreditRegistry,
    risk: ExchangeRiskState,
    polluters: Vec<PolluterState>,
    insurers: Vec<InsurerState>,
    suppliers_rng: Vec<ChaCha8Rng>,
    holder_rng: Vec<ChaCha8Rng>,
    sector_history: Option<SectorHistory>,
    /// Vintages settling adjustments directly with the government.
    idealized_book: Vec<EmissionVintage>,
    /// Tonnes registered (or credits converted) per vintage.
    registered: BTreeMap<Year, u64>,
    /// Net polluter payments attributable to each vintage.
    paid_by_vintage: BTreeMap<Year, Money>,
    defaulted_insurers: BTreeSet<AgentId>,
    quote_seq: u64,
    metrics: RunMetrics,
    reports: Vec<SettlementReport>,
    rounds: Vec<RoundData>,
}

impl<'a> Engine<'a> {
    fn new(config: &'a ScenarioConfig, seed: u64) -> Result<Self, ScenarioError> {
        config.validate()?;
        let mut ledger = Ledger::new();
        ledger.open_account(Party::Government, Money::ZERO)?;
        ledger.open_account(Party::Exchange, Money::ZERO)?;
        ledger.open_account(Party::ShortfallSink, Money::ZERO)?;
        ledger.open_account(Party::BailoutLossSink, Money::ZERO)?;
        let mut polluters = Vec::new();
        for (i, p) in config.agents.polluters.iter().enumerate() {
            let id = AgentId::polluter(i as u32);
            ledger.open_account(Party::Agent(id), Money::from_f64(p.initial_cash))?;
            polluters.push(PolluterState {
                id,
                alive: true,
                tonnes_per_year: p.tonnes_per_year,
                default_hazard: p.default_hazard,
                bids: p
                    .bids
                    .iter()
                    .map(|b| (Money::from_f64(b.price), b.volume))
                    .collect(),
                hazard_rng: stream_rng(seed, StreamDomain::PolluterHazard, i as u64),
            });
        }
        let mut insurers = Vec::new();
        for (i, ins) in config.agents.insurers.iter().enumerate() {
            let id = AgentId::insurer(i as u32);
            ledger.open_account(Party::Agent(id), Money::from_f64(ins.initial_cash))?;
            ledger.open_account(Party::Reserve(id), Money::ZERO)?;
            insurers.push(InsurerState {
                id,
                policy: config.insurer_policy(ins),
                tonnes_insured: 0,
                swap_paid: Money::ZERO,
                swap_received: Money::ZERO,
                premium_income: Money::ZERO,
                defaulted: false,
            });
        }
        let mut suppliers_rng = Vec::new();
        for (i, _) in config.agents.suppliers.iter().enumerate() {
            let id = AgentId::supplier(i as u32);
            ledger.open_account(Party::Agent(id), Money::ZERO)?;
            suppliers_rng.push(stream_rng(seed, StreamDomain::Supplier, i as u64));
        }
        let holder_rng = config
            .baseline
            .vpdollar
            .iter()
            .flat_map(|vp| 0..vp.holders.len())
            .map(|i| stream_rng(seed, StreamDomain::Buyer, i as u64))
            .collect();
        if config.mechanism == MechanismKind::Reserves {
            for i in 0..config.agents.polluters.len() {
                ledger.open_account(Party::Reserve(AgentId::polluter(i as u32)), Money::ZERO)?;
            }
        }
        if let Some(vp) = &config.baseline.vpdollar {
            // Voucher holders beyond the configured polluters still need
            // cash accounts for repo proceeds.
            for i in config.agents.polluters.len()..vp.holders.len() {
                ledger.open_account(Party::Agent(AgentId::polluter(i as u32)), Money::ZERO)?;
            }
        }
        let sector_history = config.baseline.reserves.as_ref().map(|r| {
            let mut history = SectorHistory::new();
            for sector in &r.sectors {
                for (year, gdp) in sector.gdp.iter().enumerate() {
                    history.record_gdp(sector.sector, year as Year, *gdp);
                }
                for fine in &sector.fines {
                    for (year, value) in fine.values.iter().enumerate() {
                        history.record_fine(
                            sector.sector,
                            fine.scale,
                            year as Year,
                            Money::from_f64(*value),
                        );
                    }
                }
            }
            history
        });
        let metrics = RunMetrics::new(&config.name, config.mechanism.label(), seed, config.years);
        Ok(Engine {
            config,
            basis: config.market.settlement,
            ledger,
            history: DamageHistory::new(config.world, seed),
            schedule: config.agency_schedule(),
            table: EstimateTable::new(),
            tracked_vintages: BTreeSet::new(),
            contracts: Vec::new(),
            next_contract_id: 1,
            registry: CreditRegistry::new(),
            risk: ExchangeRiskState::new(config.market.adjustment_floor.map(Money::from_f64)),
            polluters,
            insurers,
            suppliers_rng,
            holder_rng,
            sector_history,
            idealized_book: Vec::new(),
            registered: BTreeMap::new(),
            paid_by_vintage: BTreeMap::new(),
            defaulted_insurers: BTreeSet::new(),
            quote_seq: 0,
            metrics,
            reports: Vec::new(),
            rounds: Vec::new(),
        })
    }

    fn uses_agency(&self) -> bool {
        matches!(
            self.config.mechanism,
            MechanismKind::IdealizedRecap | MechanismKind::InsuredRecap | MechanismKind::Precap
        )
    }

    fn run(mut self) -> Result<RunOutput, ScenarioError> {
        self.post_default_funds()?;
        for t in 0..self.config.years {
            self.draw_bankruptcies(t);
            let release = if self.uses_agency() {
                Some(self.evaluate_agency(t)?)
            } else {
                None
            };
            let report = match self.config.mechanism {
                MechanismKind::IdealizedRecap => {
                    self.step_idealized(t, release.as_ref().expect("agency ran"))?
                }
                MechanismKind::InsuredRecap => {
                    self.step_insured(t, release.as_ref().expect("agency ran"))?
                }
                MechanismKind::Precap => {
                    self.step_precap(t, release.as_ref().expect("agency ran"))?
                }
                MechanismKind::FixedTax => self.step_fixed_tax(t)?,
                MechanismKind::Reserves => self.step_reserves(t)?,
                MechanismKind::Vpdollar => self.step_vpdollar(t)?,
            };
            self.track_polluter_payments(&report);
            self.metrics.counterparty_losses += report.counterparty_losses;
            self.audit(t)?;
            self.append_metrics(t, &report);
            self.reports.push(report);
        }
        self.finish()
    }

    fn post_default_funds(&mut self) -> Result<(), ScenarioError> {
        for (i, ins) in self.config.agents.insurers.iter().enumerate() {
            let fund = Money::from_f64(ins.default_fund);
            if fund.is_positive() {
                let id = AgentId::insurer(i as u32);
                self.ledger.transfer(
                    0,
                    Party::Agent(id),
                    Party::Reserve(id),
                    fund,
                    EntryReason::Reserve,
                )?;
            }
        }
        Ok(())
    }

    fn draw_bankruptcies(&mut self, t: Year) {
        if t == 0 {
            return;
        }
        for polluter in &mut self.polluters {
            let draw: f64 = polluter.hazard_rng.random();
            if polluter.alive && draw < polluter.default_hazard {
                polluter.alive = false;
            }
        }
    }

    /// Measure this year's damages for every tracked vintage and record
    /// estimates evaluated at `t`, then publish the release.
    fn evaluate_agency(&mut self, t: Year) -> Result<RetroAgencyRelease, ScenarioError> {
        self.tracked_vintages.insert(t);
        let world = self.config.world;
        for vintage in self.tracked_vintages.iter().copied() {
            self.history.value(vintage, t)?;
        }
        let model = self.schedule.model_at(&world, &self.history, t);
        for vintage in self.tracked_vintages.iter().copied() {
            let estimate = estimate_scc(&world, &model, &self.history, vintage, t)?;
            self.table.record(estimate)?;
        }
        let window = self.config.agency.window.min(t);
        Ok(retro_agency_release(&self.table, t, window)?)
    }

    fn live_registrations(&self, t: Year) -> Vec<EmissionVintage> {
        self.polluters
            .iter()
            .filter(|p| p.alive && p.tonnes_per_year > 0)
            .map(|p| EmissionVintage {
                polluter: p.id,
                vintage: t,
                tonnes: p.tonnes_per_year,
            })
            .collect()
    }

    fn bankrupt_set(&self) -> HashSet<AgentId> {
        self.polluters
            .iter()
            .filter(|p| !p.alive)
            .map(|p| p.id)
            .collect()
    }

    fn note_registrations(&mut self, registrations: &[EmissionVintage]) {
        for r in registrations {
            *self.registered.entry(r.vintage).or_insert(0) += r.tonnes;
        }
    }

    fn step_idealized(
        &mut self,
        t: Year,
        release: &RetroAgencyRelease,
    ) -> Result<SettlementReport, ScenarioError> {
        let new = self.live_registrations(t);
        self.note_registrations(&new);
        let window = self.config.agency.window;
        let active: Vec<EmissionVintage> = self
            .idealized_book
            .iter()
            .filter(|p| p.vintage < t && t - p.vintage <= window)
            .copied()
            .collect();
        let report = idealized_recap_step(
            t,
            &new,
            &active,
            &self.bankrupt_set(),
            release,
            &self.table,
            self.basis,
            self.config.world.discount_rate,
            &mut self.ledger,
        )?;
        self.idealized_book.extend(new);
        Ok(report)
    }

    /// Quotes from every live insurer for new vintage `t`: base rung plus
    /// any markup rungs, priced off its own model against the agency's.
    fn collect_quotes(&mut self, t: Year, initial_estimate: Money) -> Vec<PremiumQuote> {
        let world = self.config.world;
        let agency_model = self.schedule.model_at(&world, &self.history, t);
        let cap = self.config.market.cap_horizon;
        let mut quotes = Vec::new();
        for insurer in &self.insurers {
            if insurer.defaulted {
                continue;
            }
            let predicted = expected_total_adjustment(
                &insurer.policy.model,
                &agency_model,
                &world,
                t,
                initial_estimate,
                cap,
            );
            let base = quote_premium(
                &insurer.policy,
                predicted,
                insurer.realized_loss_per_tonne(),
            );
            for rung in &insurer.policy.supply {
                quotes.push(PremiumQuote {
                    insurer: insurer.id,
                    vintage: t,
                    premium: base + rung.markup,
                    volume: rung.volume,
                    posted_at: self.quote_seq,
                });
                self.quote_seq += 1;
            }
        }
        quotes
    }

    fn quote_samples(quotes: &[PremiumQuote]) -> Vec<(Money, u64)> {
        quotes.iter().map(|q| (q.premium, q.volume)).collect()
    }

    fn step_insured(
        &mut self,
        t: Year,
        release: &RetroAgencyRelease,
    ) -> Result<SettlementReport, ScenarioError> {
        let new = self.live_registrations(t);
        self.note_registrations(&new);
        let initial = release
            .estimate_for(t)
            .expect("release covers the newest vintage")
            .value;
        let quotes = self.collect_quotes(t, initial);
        self.metrics
            .premium_quantiles
            .push(premium_quantiles(&Self::quote_samples(&quotes)));

        let mut report = SettlementReport::default();
        let mut unmet_new = new.clone();
        if !quotes.is_empty() {
            let (assignments, unmet) = insured_recap_auction(&new, &quotes)?;
            let (contracts, assignment_report) = apply_insured_assignments(
                t,
                &assignments,
                release,
                self.config.market.cap_horizon,
                &mut self.next_contract_id,
                &mut self.ledger,
            )?;
            for assignment in &assignments {
                if let Some(state) = self
                    .insurers
                    .iter_mut()
                    .find(|i| i.id == assignment.insurer)
                {
                    state.tonnes_insured += assignment.tonnes;
                    state.premium_income += assignment.premium * assignment.tonnes;
                }
            }
            self.contracts.extend(contracts);
            report.merge(assignment_report);
            unmet_new = unmet;
        }

        // Registrations no quote absorbed fall back to idealized treatment.
        let window = self.config.agency.window;
        let active: Vec<EmissionVintage> = self
            .idealized_book
            .iter()
            .filter(|p| p.vintage < t && t - p.vintage <= window)
            .copied()
            .collect();
        if !unmet_new.is_empty() || !active.is_empty() {
            let fallback = idealized_recap_step(
                t,
                &unmet_new,
                &active,
                &self.bankrupt_set(),
                release,
                &self.table,
                self.basis,
                self.config.world.discount_rate,
                &mut self.ledger,
            )?;
            report.merge(fallback);
        }
        report.unmet.extend(unmet_new.iter().copied());
        self.idealized_book.extend(unmet_new);

        let settle = settle_swaps(
            t,
            &mut self.contracts,
            &self.table,
            None,
            self.basis,
            self.config.world.discount_rate,
            &mut self.ledger,
        )?;
        for insurer in &mut self.insurers {
            insurer.absorb_settlements(&settle);
            if insurer.defaulted {
                self.defaulted_insurers.insert(insurer.id);
            }
        }
        report.merge(settle);
        Ok(report)
    }

    fn step_precap(
        &mut self,
        t: Year,
        release: &RetroAgencyRelease,
    ) -> Result<SettlementReport, ScenarioError> {
        let world = self.config.world;
        let market = self.config.market.clone();
        let mut book = OrderBook::new();

        // Suppliers mint and list this year's credits.
        for (i, supplier) in self.config.agents.suppliers.iter().enumerate() {
            let id = AgentId::supplier(i as u32);
            let mut plain = Vec::new();
            let mut breakthrough = Vec::new();
            for _ in 0..supplier.credits_per_year {
                let draw: f64 = self.suppliers_rng[i].random();
                let is_breakthrough = draw < supplier.breakthrough_fraction;
                let credit = self.registry.mint(id, is_breakthrough);
                if is_breakthrough {
                    breakthrough.push(credit);
                } else {
                    plain.push(credit);
                }
            }
            if !plain.is_empty() {
                let volume = plain.len() as u64;
                book.post_order(
                    &self.registry,
                    Party::Agent(id),
                    OrderSide::SupplierAsk { credit_ids: plain },
                    Money::from_f64(supplier.ask_price),
                    volume,
                )?;
            }
            if !breakthrough.is_empty() {
                let volume = breakthrough.len() as u64;
                let price = supplier
                    .breakthrough_ask_price
                    .unwrap_or(supplier.ask_price);
                book.post_order(
                    &self.registry,
                    Party::Agent(id),
                    OrderSide::SupplierAsk {
                        credit_ids: breakthrough,
                    },
                    Money::from_f64(price),
                    volume,
                )?;
            }
        }

        // Insurer premium asks for conversions of vintage t.
        let initial = release
            .estimate_for(t)
            .expect("release covers the newest vintage")
            .value;
        let quotes = self.collect_quotes(t, initial);
        self.metrics
            .premium_quantiles
            .push(premium_quantiles(&Self::quote_samples(&quotes)));
        for quote in &quotes {
            book.post_order(
                &self.registry,
                Party::Agent(quote.insurer),
                OrderSide::PremiumAsk,
                quote.premium,
                quote.volume,
            )?;
        }

        // Buyer bids: live polluters' ladders plus the exchange's own
        // artificial demand.
        for polluter in &self.polluters {
            if !polluter.alive {
                continue;
            }
            for (price, volume) in &polluter.bids {
                let routed = (*volume as f64 * market.participation_rate).floor() as u64;
                if routed == 0 {
                    continue;
                }
                book.post_order(
                    &self.registry,
                    Party::Agent(polluter.id),
                    OrderSide::BuyerBid {
                        target_credit_id: None,
                    },
                    *price,
                    routed,
                )?;
            }
        }
        for step in &market.exchange_bids {
            book.post_order(
                &self.registry,
                Party::Exchange,
                OrderSide::BuyerBid {
                    target_credit_id: None,
                },
                Money::from_f64(step.price),
                step.volume,
            )?;
        }

        let outcome = clear_auction(
            &book,
            &self.registry,
            t,
            market.breakthrough_quota,
            Money::from_f64(market.scc_cap),
            market.cap_horizon,
            &mut self.next_contract_id,
        )?;
        self.check_round_invariants(&outcome.trades, market.breakthrough_quota, market.scc_cap);
        let mut report = apply_trades(t, &outcome.trades, &mut self.registry, &mut self.ledger)?;
        for swap in &outcome.swaps {
            if let Some(state) = self.insurers.iter_mut().find(|i| i.id == swap.insurer) {
                state.tonnes_insured += swap.tonnes;
                state.premium_income += swap.premium * swap.tonnes;
            }
            *self.registered.entry(swap.vintage).or_insert(0) += swap.tonnes;
        }
        self.contracts.extend(outcome.swaps.iter().copied());

        let settle = settle_exchange_swaps(
            t,
            &mut self.contracts,
            &self.table,
            &mut self.risk,
            self.basis,
            world.discount_rate,
            &mut self.ledger,
        )?;
        for insurer in &mut self.insurers {
            insurer.absorb_settlements(&settle);
            if insurer.defaulted {
                self.defaulted_insurers.insert(insurer.id);
            }
        }
        let signal = extract_scc_signal(&book, &outcome.trades, t);
        self.rounds.push(RoundData {
            time: t,
            orders: book.orders().to_vec(),
            trades: outcome.trades.clone(),
            swaps_created: outcome.swaps.clone(),
            signal,
        });
        report.merge(settle);
        Ok(report)
    }

    /// Per-round enforcement of the breakthrough rules; violations are
    /// engine bugs, not scenario outcomes.
    fn check_round_invariants(&self, trades: &[Trade], quota: f64, scc_cap: f64) {
        let cap = Money::from_f64(scc_cap);
        let mut baskets: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        for trade in trades {
            let entry = baskets.entry(trade.buyer.to_string()).or_insert((0, 0));
            entry.0 += 1;
            if trade.is_breakthrough {
                entry.1 += 1;
                assert!(
                    trade.credit_price <= cap,
                    "breakthrough trade above the price cap"
                );
            }
        }
        for (buyer, (total, breakthrough)) in baskets {
            let required = (quota * total as f64).ceil() as u64;
            assert!(
                breakthrough >= required,
                "buyer {buyer} basket violates the breakthrough quota"
            );
        }
    }

    fn step_fixed_tax(&mut self, t: Year) -> Result<SettlementReport, ScenarioError> {
        let new = self.live_registrations(t);
        self.note_registrations(&new);
        let rate = Money::from_f64(self.config.baseline.fixed_tax_rate);
        Ok(baseline_fixed_tax(t, &new, rate, &mut self.ledger)?)
    }

    fn step_reserves(&mut self, t: Year) -> Result<SettlementReport, ScenarioError> {
        let reserves = self.config.baseline.reserves.as_ref().expect("validated");
        let history = self.sector_history.as_ref().expect("validated");
        let mut report = SettlementReport::default();
        if t < reserves.window {
            return Ok(report);
        }
        for (i, company) in reserves.companies.iter().enumerate() {
            let id = AgentId::polluter(i as u32);
            let requirement = baseline_reserves_for_pollution(
                history,
                company.sector,
                company.scale,
                t,
                reserves.reserve_rate,
                reserves.window,
            )?;
            if let Some(record) = adjust_reserve(t, id, requirement, &mut self.ledger)? {
                report.records.push(record);
            }
        }
        Ok(report)
    }

    fn step_vpdollar(&mut self, t: Year) -> Result<SettlementReport, ScenarioError> {
        let vp = self.config.baseline.vpdollar.as_ref().expect("validated");
        let mut bids = Vec::new();
        for (i, holder) in vp.holders.iter().enumerate() {
            let jitter: f64 = if holder.jitter > 0.0 {
                self.holder_rng[i].random_range(-holder.jitter..holder.jitter)
            } else {
                0.0
            };
            bids.push(VoucherBid {
                holder: AgentId::polluter(i as u32),
                bid: Money::from_f64((holder.base_bid + jitter).max(0.0)),
                volume: holder.volume,
            });
        }
        let accepted = baseline_vpdollar_auction(&bids, Money::from_f64(vp.upper_bound));
        Ok(apply_vpdollar_repo(t, &accepted, &mut self.ledger)?)
    }

    /// Net polluter payments per vintage: initial charges, premia,
    /// adjustment legs, and credit purchases count in; refunds count out.
    fn track_polluter_payments(&mut self, report: &SettlementReport) {
        for record in &report.records {
            let Some(vintage) = record.vintage else {
                continue;
            };
            match (record.payer, record.payee) {
                (Party::Agent(id), _) if id.kind == crate::ledger::AgentKind::Polluter => {
                    *self.paid_by_vintage.entry(vintage).or_insert(Money::ZERO) += record.amount;
                }
                (_, Party::Agent(id)) if id.kind == crate::ledger::AgentKind::Polluter => {
                    *self.paid_by_vintage.entry(vintage).or_insert(Money::ZERO) -= record.amount;
                }
                _ => {}
            }
        }
    }

    fn audit(&self, t: Year) -> Result<(), ScenarioError> {
        self.ledger
            .audit()
            .map(|_| ())
            .map_err(|failure| ScenarioError::Audit { year: t, failure })
    }

    fn append_metrics(&mut self, t: Year, _report: &SettlementReport) {
        let deltas: Vec<f64> = self
            .tracked_vintages
            .iter()
            .filter(|v| **v < t)
            .filter_map(|v| self.table.adjustment(*v, t))
            .map(|a| a.delta.to_f64())
            .collect();
        let mean_delta = if deltas.is_empty() {
            0.0
        } else {
            deltas.iter().sum::<f64>() / deltas.len() as f64
        };
        self.metrics.mean_delta.push(mean_delta);
        self.metrics
            .government_balance
            .push(self.ledger.balance_of(&Party::Government));
        self.metrics
            .shortfall_total
            .push(-self.ledger.balance_of(&Party::ShortfallSink));
        self.metrics
            .insurer_defaults
            .push(self.defaulted_insurers.len() as u32);
        self.metrics
            .exchange_cash
            .push(self.ledger.balance_of(&Party::Exchange));
        if self.config.mechanism == MechanismKind::Precap {
            self.metrics
                .scc_signal
                .push(self.rounds.last().and_then(|r| r.signal));
        } else {
            self.metrics.scc_signal.push(None);
        }
        // Mechanisms without premium markets report no quantiles.
        if self.metrics.premium_quantiles.len() < self.metrics.scc_signal.len() {
            self.metrics.premium_quantiles.push(None);
        }
    }

    fn finish(mut self) -> Result<RunOutput, ScenarioError> {
        let world = self.config.world;
        let mut oracles = BTreeMap::new();
        for (vintage, tonnes) in self.registered.clone() {
            for period in vintage..=world.horizon {
                self.history.value(vintage, period)?;
            }
            let oracle = true_scc_oracle(&world, &self.history, vintage)?;
            oracles.insert(vintage, oracle);
            let owed = oracle * tonnes;
            let paid = self
                .paid_by_vintage
                .get(&vintage)
                .copied()
                .unwrap_or(Money::ZERO);
            self.metrics.ppp_gap += (owed - paid).abs();
            self.metrics.oracle_shortfall += (owed - paid).max(Money::ZERO);
        }
        let audit = self
            .ledger
            .audit()
            .map_err(|failure| ScenarioError::Audit {
                year: self.config.years,
                failure,
            })?;
        self.metrics.final_balances = audit.balances;
        self.metrics.ledger_entries = audit.entries;
        self.metrics.insurer_volumes = self
            .insurers
            .iter()
            .map(|i| (i.id, i.tonnes_insured))
            .collect();
        Ok(RunOutput {
            metrics: self.metrics,
            ledger: self.ledger,
            estimates: self.table,
            contracts: self.contracts,
            reports: self.reports,
            rounds: self.rounds,
            oracles,
        })
    }
}

/// Run one scenario for one seed.
pub fn run_scenario(config: &ScenarioConfig, seed: u64) -> Result<RunOutput, ScenarioError> {
    Engine::new(config, seed)?.run()
}

/// Run many seeds in parallel, metrics returned in input order. The first
/// failing seed aborts the sweep with its id attached.
pub fn run_seeds(config: &ScenarioConfig, seeds: &[u64]) -> Result<Vec<RunMetrics>, ScenarioError> {
    use rayon::prelude::*;
    config.validate()?;
    let results: Vec<Result<RunMetrics, ScenarioError>> = seeds
        .par_iter()
        .map(|seed| {
            run_scenario(config, *seed)
                .map(|out| out.metrics)
                .map_err(|e| ScenarioError::SeededRun {
                    seed: *seed,
                    source: Box::new(e),
                })
        })
        .collect();
    let mut metrics = Vec::with_capacity(results.len());
    for result in results {
        metrics.push(result?);
    }
    Ok(metrics)
}
