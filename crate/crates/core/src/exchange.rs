//! The retro-exchange: insured-carbon-credit order book, three-sided batch
//! clearing, swap settlement with risk controls, and the premium-derived
//! SCC signal.
//!
//! Suppliers list credits, insurers post premium asks, buyers bid; only
//! insured credits are purchasable. Clearing augments each uninsured credit
//! with the cheapest available premium and matches greedily under
//! price-time priority: bids descending against effective asks ascending,
//! trades printing at the effective ask (pay-as-ask). A matched uninsured
//! credit converts to an insured one and spawns a swap between its insurer
//! and the exchange. Buyers' baskets must carry the configured fraction of
//! breakthrough credits, whose credit price is capped; a buyer whose quota
//! cannot be satisfied stops matching for the round.

use crate::ledger::{AgentId, EntryReason, Ledger, Party, Year};
use crate::mechanisms::{
    settle_swaps, Counterparty, MechanismError, SettlementBasis, SettlementReport, SwapContract,
};
use crate::money::Money;
use crate::scc::EstimateTable;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};

/// Identity of one carbon credit (always one tonne).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CreditId(pub u64);

/// Insurance state of a credit. Insured credits are immutable: the insurer
/// and conversion time are set exactly once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CreditStatus {
    Uninsured,
    Insured {
        insurer: AgentId,
        converted_at: Year,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarbonCredit {
    pub id: CreditId,
    pub supplier: AgentId,
    pub is_breakthrough: bool,
    pub status: CreditStatus,
    /// Current owner; starts at the supplier, moves on trade.
    pub holder: Party,
}

impl CarbonCredit {
    pub fn is_insured(&self) -> bool {
        matches!(self.status, CreditStatus::Insured { .. })
    }
}

/// Mint, lookup, and conversion of credits.
#[derive(Debug, Clone, Default)]
pub struct CreditRegistry {
    credits: BTreeMap<CreditId, CarbonCredit>,
    next_id: u64,
}

impl CreditRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mint(&mut self, supplier: AgentId, is_breakthrough: bool) -> CreditId {
        let id = CreditId(self.next_id);
        self.next_id += 1;
        self.credits.insert(
            id,
            CarbonCredit {
                id,
                supplier,
                is_breakthrough,
                status: CreditStatus::Uninsured,
                holder: Party::Agent(supplier),
            },
        );
        id
    }

    pub fn get(&self, id: CreditId) -> Option<&CarbonCredit> {
        self.credits.get(&id)
    }

    /// Convert an uninsured credit; insured credits never convert again.
    pub fn convert(
        &mut self,
        id: CreditId,
        insurer: AgentId,
        t: Year,
    ) -> Result<(), ExchangeError> {
        let credit = self
            .credits
            .get_mut(&id)
            .ok_or(ExchangeError::UnknownCredit(id))?;
        if credit.is_insured() {
            return Err(ExchangeError::AlreadyInsured(id));
        }
        credit.status = CreditStatus::Insured {
            insurer,
            converted_at: t,
        };
        Ok(())
    }

    pub fn set_holder(&mut self, id: CreditId, holder: Party) -> Result<(), ExchangeError> {
        let credit = self
            .credits
            .get_mut(&id)
            .ok_or(ExchangeError::UnknownCredit(id))?;
        credit.holder = holder;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &CarbonCredit> {
        self.credits.values()
    }
}

/// Order side plus its side-specific payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "side", rename_all = "kebab-case")]
pub enum OrderSide {
    /// Credits offered for sale; one listed credit per unit of volume.
    SupplierAsk { credit_ids: Vec<CreditId> },
    /// Demand for insured credits; optionally pinned to one listed credit.
    BuyerBid {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_credit_id: Option<CreditId>,
    },
    /// An insurer's offer to insure, per credit.
    PremiumAsk,
}

/// One order in a clearing round. Serialized with the stable wire names
/// `side`, `agent_id`, `price_micro`, `volume`, `seq`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    #[serde(flatten)]
    pub side: OrderSide,
    pub agent_id: Party,
    pub price_micro: Money,
    pub volume: u64,
    pub seq: u64,
}

impl Order {
    pub fn price(&self) -> Money {
        self.price_micro
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExchangeError {
    #[error("credit {0:?} does not exist")]
    UnknownCredit(CreditId),
    #[error("credit {0:?} is already insured")]
    AlreadyInsured(CreditId),
    #[error("uninsured credits are not purchasable: bid targets {0:?}")]
    NotPurchasable(CreditId),
    #[error("credit {0:?} is not held by the asker")]
    NotHolder(CreditId),
    #[error("credit {0:?} listed more than once in the round")]
    DuplicateListing(CreditId),
    #[error("invalid order: {0}")]
    InvalidOrder(String),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Ledger(#[from] crate::ledger::LedgerError),
}

/// Append-only order book for one clearing round.
#[derive(Debug, Clone, Default)]
pub struct OrderBook {
    orders: Vec<Order>,
    next_seq: u64,
    listed: HashSet<CreditId>,
}

impl OrderBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn orders(&self) -> &[Order] {
        &self.orders
    }

    /// Validate and append an order, assigning the next sequence number.
    pub fn post_order(
        &mut self,
        registry: &CreditRegistry,
        agent_id: Party,
        side: OrderSide,
        price: Money,
        volume: u64,
    ) -> Result<u64, ExchangeError> {
        if price.is_negative() {
            return Err(ExchangeError::InvalidOrder(
                "price must be non-negative".into(),
            ));
        }
        if volume == 0 {
            return Err(ExchangeError::InvalidOrder(
                "volume must be positive".into(),
            ));
        }
        match &side {
            OrderSide::SupplierAsk { credit_ids } => {
                if credit_ids.len() as u64 != volume {
                    return Err(ExchangeError::InvalidOrder(
                        "supplier ask must list one credit per unit of volume".into(),
                    ));
                }
                for id in credit_ids {
                    let credit = registry.get(*id).ok_or(ExchangeError::UnknownCredit(*id))?;
                    if credit.holder != agent_id {
                        return Err(ExchangeError::NotHolder(*id));
                    }
                    if !self.listed.insert(*id) {
                        return Err(ExchangeError::DuplicateListing(*id));
                    }
                }
            }
            OrderSide::BuyerBid { target_credit_id } => {
                if let Some(id) = target_credit_id {
                    let credit = registry.get(*id).ok_or(ExchangeError::UnknownCredit(*id))?;
                    if !credit.is_insured() {
                        return Err(ExchangeError::NotPurchasable(*id));
                    }
                }
            }
            OrderSide::PremiumAsk => {}
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.orders.push(Order {
            side,
            agent_id,
            price_micro: price,
            volume,
            seq,
        });
        Ok(seq)
    }
}

/// One executed unit trade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trade {
    pub buyer: Party,
    pub supplier: Party,
    pub credit_id: CreditId,
    /// Credit component of the price, paid to the supplier.
    pub credit_price: Money,
    /// Premium component, paid to the insurer on conversion trades.
    pub premium: Money,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub insurer: Option<AgentId>,
    pub is_breakthrough: bool,
    pub bid_seq: u64,
    pub ask_seq: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub premium_seq: Option<u64>,
}

impl Trade {
    pub fn effective_price(&self) -> Money {
        self.credit_price + self.premium
    }
}

/// Result of clearing one frozen book.
#[derive(Debug, Clone, Default)]
pub struct ClearingOutcome {
    pub trades: Vec<Trade>,
    pub swaps: Vec<SwapContract>,
    /// Seqs of orders with unfilled remainder, carried over unmatched.
    pub unmatched: Vec<u64>,
    /// Breakthrough listings priced above the cap; never executable.
    pub capped_out: Vec<CreditId>,
}

#[derive(Debug, Clone, Copy)]
struct SupplyUnit {
    credit_id: CreditId,
    supplier: Party,
    ask: Money,
    ask_seq: u64,
    breakthrough: bool,
    needs_premium: bool,
}

#[derive(Debug, Clone, Copy)]
struct PremiumUnit {
    insurer: AgentId,
    premium: Money,
    seq: u64,
}

#[derive(Debug, Clone, Copy)]
struct BidUnit {
    buyer_index: usize,
    price: Money,
    seq: u64,
    target: Option<CreditId>,
}

/// Buyer basket slots: the `m+1`-th matched unit must be breakthrough
/// exactly when it raises the quota's required count, which keeps every
/// basket prefix at `ceil(quota * size)` breakthrough credits.
fn slot_is_breakthrough(quota: f64, matched_so_far: u64) -> bool {
    if quota <= 0.0 {
        return false;
    }
    let required_after = (quota * (matched_so_far + 1) as f64).ceil() as u64;
    let required_before = (quota * matched_so_far as f64).ceil() as u64;
    required_after > required_before
}

/// Clear a frozen book.
///
/// Uninsured supply pairs with the cheapest unconsumed premium at match
/// time; insured re-sales clear on the credit price alone. Bids execute in
/// descending price-time priority; a buyer's first failed unit (price or
/// quota infeasibility) withdraws the rest of its demand for the round.
pub fn clear_auction(
    book: &OrderBook,
    registry: &CreditRegistry,
    t: Year,
    breakthrough_quota: f64,
    scc_cap: Money,
    cap_horizon: Year,
    next_contract_id: &mut u64,
) -> Result<ClearingOutcome, ExchangeError> {
    let mut outcome = ClearingOutcome::default();

    // Supply units in ask price-time order, split by breakthrough flag.
    let mut normal: Vec<SupplyUnit> = Vec::new();
    let mut breakthrough: Vec<SupplyUnit> = Vec::new();
    let mut premium_units: Vec<PremiumUnit> = Vec::new();
    let mut buyers: Vec<Party> = Vec::new();
    let mut buyer_index: HashMap<Party, usize> = HashMap::new();
    let mut bid_units: Vec<BidUnit> = Vec::new();

    for order in book.orders() {
        match &order.side {
            OrderSide::SupplierAsk { credit_ids } => {
                for id in credit_ids {
                    let credit = registry.get(*id).ok_or(ExchangeError::UnknownCredit(*id))?;
                    let unit = SupplyUnit {
                        credit_id: *id,
                        supplier: order.agent_id,
                        ask: order.price_micro,
                        ask_seq: order.seq,
                        breakthrough: credit.is_breakthrough,
                        needs_premium: !credit.is_insured(),
                    };
                    if credit.is_breakthrough && order.price_micro > scc_cap {
                        outcome.capped_out.push(*id);
                    } else if credit.is_breakthrough {
                        breakthrough.push(unit);
                    } else {
                        normal.push(unit);
                    }
                }
            }
            OrderSide::BuyerBid { target_credit_id } => {
                let index = *buyer_index.entry(order.agent_id).or_insert_with(|| {
                    buyers.push(order.agent_id);
                    buyers.len() - 1
                });
                for _ in 0..order.volume {
                    bid_units.push(BidUnit {
                        buyer_index: index,
                        price: order.price_micro,
                        seq: order.seq,
                        target: *target_credit_id,
                    });
                }
            }
            OrderSide::PremiumAsk => {
                let insurer = match order.agent_id {
                    Party::Agent(id) => id,
                    other => {
                        return Err(ExchangeError::InvalidOrder(format!(
                            "premium ask from non-agent party {other}"
                        )))
                    }
                };
                for _ in 0..order.volume {
                    premium_units.push(PremiumUnit {
                        insurer,
                        premium: order.price_micro,
                        seq: order.seq,
                    });
                }
            }
        }
    }

    normal.sort_by_key(|u| (u.ask, u.ask_seq));
    breakthrough.sort_by_key(|u| (u.ask, u.ask_seq));
    premium_units.sort_by_key(|u| (u.premium, u.seq));
    bid_units.sort_by(|a, b| b.price.cmp(&a.price).then(a.seq.cmp(&b.seq)));

    let mut premium_cursor = 0usize;
    let mut taken_normal = vec![false; normal.len()];
    let mut taken_breakthrough = vec![false; breakthrough.len()];
    let mut matched_per_buyer = vec![0u64; buyers.len()];
    let mut withdrawn = vec![false; buyers.len()];

    // Effective cost of the cheapest available unit in one pool, given the
    // current cheapest premium for uninsured credits. Ties on cost and seq
    // prefer the unit that consumes no premium, which keeps the cheap end
    // of the premium queue available for later matches.
    let next_in = |units: &[SupplyUnit],
                   taken: &[bool],
                   premium: Option<&PremiumUnit>,
                   target: Option<CreditId>|
     -> Option<(usize, Money)> {
        let mut best: Option<(usize, (Money, u64, bool))> = None;
        for (i, unit) in units.iter().enumerate() {
            if taken[i] {
                continue;
            }
            if let Some(target_id) = target {
                if unit.credit_id != target_id {
                    continue;
                }
            }
            let cost = if unit.needs_premium {
                match premium {
                    Some(p) => unit.ask + p.premium,
                    None => continue,
                }
            } else {
                unit.ask
            };
            let key = (cost, unit.ask_seq, unit.needs_premium);
            let better = match &best {
                Some((_, best_key)) => key < *best_key,
                None => true,
            };
            if better {
                best = Some((i, key));
            }
        }
        best.map(|(i, (cost, _, _))| (i, cost))
    };

    for bid in &bid_units {
        if withdrawn[bid.buyer_index] {
            continue;
        }
        let premium = premium_units.get(premium_cursor);
        let need_breakthrough =
            slot_is_breakthrough(breakthrough_quota, matched_per_buyer[bid.buyer_index]);
        let candidate_bt = next_in(&breakthrough, &taken_breakthrough, premium, bid.target);
        let candidate = if need_breakthrough {
            candidate_bt.map(|(i, cost)| (true, i, cost))
        } else {
            let candidate_normal = next_in(&normal, &taken_normal, premium, bid.target);
            match (candidate_normal, candidate_bt) {
                (Some((ni, nc)), Some((bi, bc))) => {
                    // Cheaper pool wins; ties break by ask seq, then by
                    // not consuming a premium.
                    let bt_key = (bc, breakthrough[bi].ask_seq, breakthrough[bi].needs_premium);
                    let n_key = (nc, normal[ni].ask_seq, normal[ni].needs_premium);
                    if bt_key < n_key {
                        Some((true, bi, bc))
                    } else {
                        Some((false, ni, nc))
                    }
                }
                (Some((ni, nc)), None) => Some((false, ni, nc)),
                (None, Some((bi, bc))) => Some((true, bi, bc)),
                (None, None) => None,
            }
        };
        let Some((from_bt, index, cost)) = candidate else {
            withdrawn[bid.buyer_index] = true;
            continue;
        };
        if cost > bid.price {
            withdrawn[bid.buyer_index] = true;
            continue;
        }
        let unit = if from_bt {
            breakthrough[index]
        } else {
            normal[index]
        };
        if from_bt {
            taken_breakthrough[index] = true;
        } else {
            taken_normal[index] = true;
        }
        let (premium_paid, insurer, premium_seq) = if unit.needs_premium {
            let p = premium_units[premium_cursor];
            premium_cursor += 1;
            (p.premium, Some(p.insurer), Some(p.seq))
        } else {
            (Money::ZERO, None, None)
        };
        matched_per_buyer[bid.buyer_index] += 1;
        if let Some(insurer) = insurer {
            let id = *next_contract_id;
            *next_contract_id += 1;
            outcome.swaps.push(SwapContract::new(
                id,
                insurer,
                Counterparty::Exchange,
                t,
                1,
                premium_paid,
                cap_horizon,
            ));
        }
        outcome.trades.push(Trade {
            buyer: buyers[bid.buyer_index],
            supplier: unit.supplier,
            credit_id: unit.credit_id,
            credit_price: unit.ask,
            premium: premium_paid,
            insurer,
            is_breakthrough: unit.breakthrough,
            bid_seq: bid.seq,
            ask_seq: unit.ask_seq,
            premium_seq,
        });
    }

    // Orders with unfilled remainder carry over unmatched.
    let mut filled_by_seq: HashMap<u64, u64> = HashMap::new();
    for trade in &outcome.trades {
        *filled_by_seq.entry(trade.bid_seq).or_default() += 1;
        *filled_by_seq.entry(trade.ask_seq).or_default() += 1;
        if let Some(ps) = trade.premium_seq {
            *filled_by_seq.entry(ps).or_default() += 1;
        }
    }
    for order in book.orders() {
        let filled = filled_by_seq.get(&order.seq).copied().unwrap_or(0);
        if filled < order.volume {
            outcome.unmatched.push(order.seq);
        }
    }
    Ok(outcome)
}

/// Post the cash legs of executed trades, convert the traded uninsured
/// credits, and hand ownership to the buyers. Buyers and suppliers touch
/// money here and only here; every later adjustment leg runs between
/// insurers and the exchange.
pub fn apply_trades(
    t: Year,
    trades: &[Trade],
    registry: &mut CreditRegistry,
    ledger: &mut Ledger,
) -> Result<SettlementReport, ExchangeError> {
    let mut report = SettlementReport::default();
    for trade in trades {
        if trade.credit_price.is_positive() {
            ledger.transfer(
                t,
                trade.buyer,
                trade.supplier,
                trade.credit_price,
                EntryReason::Trade,
            )?;
            report.records.push(crate::mechanisms::SettlementRecord {
                time: t,
                payer: trade.buyer,
                payee: trade.supplier,
                amount: trade.credit_price,
                contract: None,
                vintage: Some(t),
                reason: EntryReason::Trade,
            });
        }
        if let Some(insurer) = trade.insurer {
            registry.convert(trade.credit_id, insurer, t)?;
            if trade.premium.is_positive() {
                ledger.transfer(
                    t,
                    trade.buyer,
                    Party::Agent(insurer),
                    trade.premium,
                    EntryReason::Premium,
                )?;
                report.records.push(crate::mechanisms::SettlementRecord {
                    time: t,
                    payer: trade.buyer,
                    payee: Party::Agent(insurer),
                    amount: trade.premium,
                    contract: None,
                    vintage: Some(t),
                    reason: EntryReason::Premium,
                });
            }
        }
        registry.set_holder(trade.credit_id, trade.buyer)?;
    }
    Ok(report)
}

/// Exchange-side risk controls. Per-insurer default funds live in the
/// ledger as reserve accounts; the floor and the default-event counter are
/// the state the exchange itself carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRiskState {
    /// Lower bound on cumulative per-tonne adjustments per contract.
    pub adjustment_floor: Option<Money>,
    /// Times the exchange's cash went negative after settlement.
    pub exchange_default_events: u32,
}

impl ExchangeRiskState {
    pub fn new(adjustment_floor: Option<Money>) -> Self {
        ExchangeRiskState {
            adjustment_floor,
            exchange_default_events: 0,
        }
    }

    /// The default fund an insurer currently has posted.
    pub fn default_fund(ledger: &Ledger, insurer: AgentId) -> Money {
        ledger.balance_of(&Party::Reserve(insurer))
    }
}

/// Settle exchange-side swap legs with the floor applied, then record an
/// exchange-default event if the exchange's cash went negative.
pub fn settle_exchange_swaps(
    t: Year,
    contracts: &mut [SwapContract],
    table: &EstimateTable,
    risk: &mut ExchangeRiskState,
    basis: SettlementBasis,
    discount_rate: f64,
    ledger: &mut Ledger,
) -> Result<SettlementReport, MechanismError> {
    let report = settle_swaps(
        t,
        contracts,
        table,
        risk.adjustment_floor,
        basis,
        discount_rate,
        ledger,
    )?;
    if ledger.balance_of(&Party::Exchange).is_negative() {
        risk.exchange_default_events += 1;
    }
    Ok(report)
}

/// Decentralized estimate of the gap between the true SCC and the current
/// estimate, derived from premiums the exchange observed in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SccSignal {
    pub time: Year,
    pub value: Money,
    pub sample_count: u64,
}

/// Volume-weighted lower median: the smallest value whose cumulative weight
/// reaches half the total.
fn weighted_median(mut samples: Vec<(Money, u64)>) -> Option<Money> {
    samples.retain(|(_, w)| *w > 0);
    if samples.is_empty() {
        return None;
    }
    samples.sort_by_key(|(value, _)| *value);
    let total: u64 = samples.iter().map(|(_, w)| *w).sum();
    let mut cumulative = 0u64;
    for (value, weight) in samples {
        cumulative += weight;
        if 2 * cumulative >= total {
            return Some(value);
        }
    }
    unreachable!("cumulative weight reaches the total")
}

/// Extract the round's SCC signal: the volume-weighted median of winning
/// premia, falling back to all posted premium asks when nothing traded.
/// A round with no premium asks yields no signal.
pub fn extract_scc_signal(book: &OrderBook, trades: &[Trade], t: Year) -> Option<SccSignal> {
    let winners: Vec<(Money, u64)> = trades
        .iter()
        .filter(|trade| trade.insurer.is_some())
        .map(|trade| (trade.premium, 1))
        .collect();
    let samples = if winners.is_empty() {
        book.orders()
            .iter()
            .filter(|o| matches!(o.side, OrderSide::PremiumAsk))
            .map(|o| (o.price_micro, o.volume))
            .collect()
    } else {
        winners
    };
    let sample_count = samples.iter().map(|(_, w)| *w).sum();
    weighted_median(samples).map(|value| SccSignal {
        time: t,
        value,
        sample_count,
    })
}

/// One round's inputs and outputs, serializable as JSON.
#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord<'a> {
    pub time: Year,
    pub orders: &'a [Order],
    pub trades: &'a [Trade],
    pub swaps: &'a [SwapContract],
    pub signal: Option<SccSignal>,
}
