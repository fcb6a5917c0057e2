//! Shared test support: an independent brute-force clearing oracle,
//! scenario builders, and small statistics helpers.

#![allow(dead_code)]

use rand::Rng;
use retrocap::exchange::{CreditRegistry, OrderBook, OrderSide};
use retrocap::ledger::Year;
use retrocap::money::Money;
use retrocap::rng::{stream_rng, StreamDomain};

/// One unit of supply as the oracle sees it.
#[derive(Debug, Clone, Copy)]
pub struct OracleSupplyUnit {
    pub ask: Money,
    pub seq: u64,
    pub needs_premium: bool,
}

/// One unit of demand as the oracle sees it.
#[derive(Debug, Clone, Copy)]
pub struct OracleBidUnit {
    pub price: Money,
    pub seq: u64,
}

/// A trade the oracle decided on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct OracleTrade {
    pub bid_seq: u64,
    pub ask_seq: u64,
    pub premium_seq: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub surplus: Money,
    pub trades: Vec<OracleTrade>,
}

/// Exhaustive surplus maximization over every feasible matching of unit
/// bids to unit supply, premiums consumed cheapest-first.
///
/// Implemented as a bitmask dynamic program over supply subsets, which is a
/// genuinely different computation from the clearing engine's greedy pass.
/// Reconstruction follows price-time priority so the winner set is the
/// canonical one among surplus-maximal matchings: bids in descending
/// (price, seq) order, each matched to the first (cost, seq)-ordered supply
/// unit that preserves optimality, preferring to match when indifferent.
pub fn oracle_clear(book: &OrderBook, registry: &CreditRegistry) -> OracleOutcome {
    let mut bids: Vec<OracleBidUnit> = Vec::new();
    let mut supply: Vec<OracleSupplyUnit> = Vec::new();
    let mut premiums: Vec<(Money, u64)> = Vec::new();
    for order in book.orders() {
        match &order.side {
            OrderSide::SupplierAsk { credit_ids } => {
                for id in credit_ids {
                    let credit = registry.get(*id).expect("credit exists");
                    supply.push(OracleSupplyUnit {
                        ask: order.price_micro,
                        seq: order.seq,
                        needs_premium: !credit.is_insured(),
                    });
                }
            }
            OrderSide::BuyerBid { .. } => {
                for _ in 0..order.volume {
                    bids.push(OracleBidUnit {
                        price: order.price_micro,
                        seq: order.seq,
                    });
                }
            }
            OrderSide::PremiumAsk => {
                for _ in 0..order.volume {
                    premiums.push((order.price_micro, order.seq));
                }
            }
        }
    }
    bids.sort_by(|a, b| b.price.cmp(&a.price).then(a.seq.cmp(&b.seq)));
    premiums.sort();
    assert!(supply.len() <= 16, "oracle instance too large");

    let full: u32 = (1u32 << supply.len()) - 1;
    let uicc_used = |mask: u32| -> usize {
        supply
            .iter()
            .enumerate()
            .filter(|(i, unit)| unit.needs_premium && mask & (1 << i) == 0)
            .count()
    };

    // dp[i][mask]: best achievable surplus (in micros) matching bids i..
    // with `mask` the set of still-available supply units.
    let n_bids = bids.len();
    let mut dp = vec![vec![i64::MIN; (full + 1) as usize + 1]; n_bids + 1];
    for mask in 0..=full {
        dp[n_bids][mask as usize] = 0;
    }
    for i in (0..n_bids).rev() {
        for mask in 0..=full {
            // Skip this bid unit.
            let mut best = dp[i + 1][mask as usize];
            let used_premiums = uicc_used(mask);
            for (s, unit) in supply.iter().enumerate() {
                if mask & (1 << s) == 0 {
                    continue;
                }
                let premium = if unit.needs_premium {
                    match premiums.get(used_premiums) {
                        Some((p, _)) => *p,
                        None => continue,
                    }
                } else {
                    Money::ZERO
                };
                let cost = unit.ask + premium;
                if cost > bids[i].price {
                    continue;
                }
                let gain = (bids[i].price - cost).micros();
                let next = dp[i + 1][(mask & !(1 << s)) as usize];
                if next != i64::MIN && gain + next > best {
                    best = gain + next;
                }
            }
            dp[i][mask as usize] = best;
        }
    }

    // Canonical reconstruction under price-time priority.
    let mut mask = full;
    let mut premium_cursor = 0usize;
    let mut trades = Vec::new();
    for i in 0..n_bids {
        let target = dp[i][mask as usize];
        // Candidate units in (effective cost, seq, needs-premium) order,
        // mirroring the engine's tie-break discipline.
        let mut candidates: Vec<(Money, u64, bool, usize)> = Vec::new();
        for (s, unit) in supply.iter().enumerate() {
            if mask & (1 << s) == 0 {
                continue;
            }
            let premium = if unit.needs_premium {
                match premiums.get(premium_cursor) {
                    Some((p, _)) => *p,
                    None => continue,
                }
            } else {
                Money::ZERO
            };
            let cost = unit.ask + premium;
            if cost > bids[i].price {
                continue;
            }
            candidates.push((cost, unit.seq, unit.needs_premium, s));
        }
        candidates.sort();
        let mut matched = false;
        for (cost, _, _, s) in candidates {
            let gain = (bids[i].price - cost).micros();
            let rest = dp[i + 1][(mask & !(1 << s)) as usize];
            if rest != i64::MIN && gain + rest == target {
                let premium_seq = if supply[s].needs_premium {
                    let seq = premiums[premium_cursor].1;
                    premium_cursor += 1;
                    Some(seq)
                } else {
                    None
                };
                trades.push(OracleTrade {
                    bid_seq: bids[i].seq,
                    ask_seq: supply[s].seq,
                    premium_seq,
                });
                mask &= !(1 << s);
                matched = true;
                break;
            }
        }
        if !matched {
            debug_assert_eq!(dp[i + 1][mask as usize], target);
        }
    }
    OracleOutcome {
        surplus: Money::from_micros(dp[0][full as usize]),
        trades,
    }
}

/// A random small clearing instance: up to five orders per side.
pub struct RandomInstance {
    pub registry: CreditRegistry,
    pub book: OrderBook,
}

pub fn random_instance(seed: u64, allow_breakthrough: bool) -> RandomInstance {
    use retrocap::ledger::{AgentId, Party};
    let mut rng = stream_rng(seed, StreamDomain::Auxiliary, 17);
    let mut registry = CreditRegistry::new();
    let mut book = OrderBook::new();

    let n_asks = rng.random_range(1..=5);
    for a in 0..n_asks {
        let supplier = AgentId::supplier(a);
        let volume = rng.random_range(1..=2u64);
        let mut credits = Vec::new();
        for _ in 0..volume {
            let breakthrough = allow_breakthrough && rng.random_bool(0.4);
            let id = registry.mint(supplier, breakthrough);
            if rng.random_bool(0.25) {
                // Pre-insured credit listed for re-sale.
                registry.convert(id, AgentId::insurer(9), 0).unwrap();
            }
            credits.push(id);
        }
        let price = Money::from_units(rng.random_range(1..=10));
        book.post_order(
            &registry,
            Party::Agent(supplier),
            OrderSide::SupplierAsk {
                credit_ids: credits,
            },
            price,
            volume,
        )
        .unwrap();
    }

    let n_premiums = rng.random_range(0..=5);
    for p in 0..n_premiums {
        let volume = rng.random_range(1..=2u64);
        let price = Money::from_units(rng.random_range(0..=6));
        book.post_order(
            &registry,
            Party::Agent(AgentId::insurer(p)),
            OrderSide::PremiumAsk,
            price,
            volume,
        )
        .unwrap();
    }

    let n_bids = rng.random_range(1..=5);
    for b in 0..n_bids {
        let volume = rng.random_range(1..=2u64);
        let price = Money::from_units(rng.random_range(1..=14));
        book.post_order(
            &registry,
            Party::Agent(AgentId::polluter(b)),
            OrderSide::BuyerBid {
                target_credit_id: None,
            },
            price,
            volume,
        )
        .unwrap();
    }
    RandomInstance { registry, book }
}

/// One-sided bootstrap: the q-quantile of resampled means.
pub fn bootstrap_mean_quantile(samples: &[f64], replicates: u32, q: f64, seed: u64) -> f64 {
    assert!(!samples.is_empty());
    let mut rng = stream_rng(seed, StreamDomain::Auxiliary, 23);
    let mut means: Vec<f64> = (0..replicates)
        .map(|_| {
            let total: f64 = (0..samples.len())
                .map(|_| samples[rng.random_range(0..samples.len())])
                .sum();
            total / samples.len() as f64
        })
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let index = ((replicates as f64 - 1.0) * q).round() as usize;
    means[index]
}

/// Sample mean and standard deviation.
pub fn mean_sd(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Estimate paths for a single vintage: the initial estimate and every
/// adjustment through the horizon, straight from the estimation layer.
pub fn single_vintage_deltas(
    world: &retrocap::DamageWorld,
    schedule: &retrocap::scc::AgencySchedule,
    seed: u64,
    vintage: Year,
) -> (Money, Vec<Money>, Money) {
    use retrocap::scc::{compute_adjustment, estimate_scc, true_scc_oracle};
    let mut history = retrocap::DamageHistory::new(*world, seed);
    for period in vintage..=world.horizon {
        history.value(vintage, period).unwrap();
    }
    let mut estimates = Vec::new();
    for eval_time in vintage..=world.horizon {
        let model = schedule.model_at(world, &history, eval_time);
        estimates.push(estimate_scc(world, &model, &history, vintage, eval_time).unwrap());
    }
    let deltas: Vec<Money> = estimates
        .windows(2)
        .map(|pair| compute_adjustment(&pair[0], &pair[1]).unwrap().delta)
        .collect();
    let oracle = true_scc_oracle(world, &history, vintage).unwrap();
    (estimates[0].value, deltas, oracle)
}
