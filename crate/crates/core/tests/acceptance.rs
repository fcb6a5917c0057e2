//! Acceptance suite: one test per criterion, each ending with a printed
//! pass line (visible under `--nocapture`).

mod common;

use rayon::prelude::*;
use retrocap::damage::{DamageWorld, EstimatorModel};
use retrocap::exchange::clear_auction;
use retrocap::ledger::{audit_csv, EntryReason};
use retrocap::money::Money;
use retrocap::scc::AgencySchedule;
use retrocap::scenario::config::*;
use retrocap::scenario::{run_scenario, run_seeds};
use std::collections::BTreeMap;
use std::time::Instant;

fn pass(n: u32, what: &str) {
    println!("criterion {n:02} PASS: {what}");
}

fn model(b2: f64, b4: f64, alpha: f64) -> EstimatorModel {
    EstimatorModel {
        b2,
        b4,
        anneal_alpha: alpha,
        calibration_window: 5,
    }
}

fn agency(m: EstimatorModel) -> AgencyConfig {
    AgencyConfig {
        window: 10,
        model: m,
        anneal_rate: 0.0,
        anneal_start: None,
        refit: false,
    }
}

fn polluter(tonnes: u64, hazard: f64, cash: f64) -> PolluterConfig {
    PolluterConfig {
        tonnes_per_year: tonnes,
        default_hazard: hazard,
        initial_cash: cash,
        bids: Vec::new(),
    }
}

fn insurer(m: EstimatorModel, cash: f64, fund: f64, supply: u64) -> InsurerConfig {
    InsurerConfig {
        model: m,
        cost_margin: 0.5,
        profit_margin: 0.5,
        supply_volume: supply,
        supply_markups: Vec::new(),
        initial_cash: cash,
        default_fund: fund,
        solvency_sensitivity: 1.0,
    }
}

/// Criterion 1: the telescoping identity holds exactly for every vintage
/// over a 100-year horizon with ten vintages, in under a second.
#[test]
fn criterion_01_telescoping_identity() {
    let started = Instant::now();
    let world = DamageWorld {
        a2: 1.0,
        a4: 0.02,
        onset_delay: 4,
        sigma: 2.0,
        horizon: 100,
        discount_rate: 0.03,
    };
    let schedule = AgencySchedule::fixed(model(1.0, 0.0, 0.0));
    for vintage in 0..10 {
        let (initial, deltas, oracle) =
            common::single_vintage_deltas(&world, &schedule, 42 + vintage as u64, vintage);
        let total: Money = initial + deltas.into_iter().sum::<Money>();
        assert_eq!(
            total, oracle,
            "vintage {vintage} does not telescope exactly"
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    pass(
        1,
        &format!("exact telescoping over 10 vintages, 100 years, in {elapsed:?}"),
    );
}

/// Criterion 2: with a perfect-in-mean estimator and noise on, adjustments
/// are mean-zero within the 4 sd / sqrt(N) band at every t, with strictly
/// positive variance, over N = 10^4 full runs in under a minute.
#[test]
fn criterion_02_perfect_model_adjustments_are_mean_zero() {
    let started = Instant::now();
    let world = DamageWorld {
        a2: 1.0,
        a4: 0.0,
        onset_delay: 0,
        sigma: 1.0,
        horizon: 12,
        discount_rate: 0.02,
    };
    let config = ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: "perfect-mean".into(),
        mechanism: MechanismKind::IdealizedRecap,
        world,
        agency: AgencyConfig {
            window: 12,
            ..agency(model(1.0, 0.0, 0.0))
        },
        agents: AgentsConfig {
            polluters: vec![polluter(1, 0.0, 1_000_000.0)],
            insurers: Vec::new(),
            suppliers: Vec::new(),
        },
        market: MarketConfig::default(),
        baseline: BaselineConfig::default(),
        years: 12,
        seeds: Vec::new(),
    };
    let n = 10_000u64;
    // Per seed: the first vintage's adjustment path out of the run's
    // estimate table, plus the cross-vintage mean series the run reports.
    let per_seed: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|seed| {
            let output = run_scenario(&config, seed).unwrap();
            let vintage0: Vec<f64> = (1..config.years)
                .map(|t| output.estimates.adjustment(0, t).unwrap().delta.to_f64())
                .collect();
            (vintage0, output.metrics.mean_delta)
        })
        .collect();
    for t in 0..(config.years - 1) as usize {
        let samples: Vec<f64> = per_seed.iter().map(|(d, _)| d[t]).collect();
        let (mean, sd) = common::mean_sd(&samples);
        assert!(sd > 0.0, "variance vanished at t={}", t + 1);
        let band = 4.0 * sd / (n as f64).sqrt();
        assert!(
            mean.abs() <= band,
            "t={}: |mean| {} exceeds band {}",
            t + 1,
            mean.abs(),
            band
        );
    }
    // The reported mean-delta series is statistically zero as well.
    for t in 1..config.years as usize {
        let samples: Vec<f64> = per_seed.iter().map(|(_, m)| m[t]).collect();
        let (mean, sd) = common::mean_sd(&samples);
        assert!(sd > 0.0);
        assert!(mean.abs() <= 4.0 * sd / (n as f64).sqrt());
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    pass(
        2,
        &format!("mean-zero adjustments across {n} runs in {elapsed:?}"),
    );
}

fn misspecified_world() -> DamageWorld {
    DamageWorld {
        a2: 1.0,
        a4: 0.01,
        onset_delay: 3,
        sigma: 0.0,
        horizon: 40,
        discount_rate: 0.0,
    }
}

/// Criterion 3: with a misspecified model and no innovation, adjustments
/// grow strictly once the slow-onset term activates. Exact, noise-free.
#[test]
fn criterion_03_misspecified_adjustments_grow() {
    let started = Instant::now();
    let world = misspecified_world();
    let schedule = AgencySchedule::fixed(model(1.0, 0.0, 0.0));
    let (_, deltas, _) = common::single_vintage_deltas(&world, &schedule, 0, 0);
    let onset = world.onset_delay as usize;
    for (i, delta) in deltas.iter().enumerate().take(onset) {
        assert_eq!(
            *delta,
            Money::ZERO,
            "pre-onset delta at t={} not zero",
            i + 1
        );
    }
    for i in onset..deltas.len() - 1 {
        assert!(
            deltas[i + 1].abs() > deltas[i].abs(),
            "delta not strictly increasing at t={}: {} vs {}",
            i + 1,
            deltas[i].abs(),
            deltas[i + 1].abs()
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    pass(
        3,
        &format!("post-onset adjustments strictly increase in {elapsed:?}"),
    );
}

/// Criterion 4: annealing innovation makes adjustments larger right after
/// onset but flattens their late growth below the no-innovation run's.
#[test]
fn criterion_04_innovation_shifts_adjustments_early() {
    let started = Instant::now();
    let world = misspecified_world();
    let frozen = AgencySchedule::fixed(model(1.0, 0.0, 0.0));
    let annealed = AgencySchedule {
        base_model: model(1.0, 0.0, 0.0),
        anneal_rate: 0.1,
        anneal_start: Some(world.onset_delay),
        refit: false,
    };
    let (_, frozen_deltas, _) = common::single_vintage_deltas(&world, &frozen, 0, 0);
    let (_, annealed_deltas, _) = common::single_vintage_deltas(&world, &annealed, 0, 0);

    // Larger adjustments for the first onset_delay periods past onset.
    let onset = world.onset_delay as usize;
    for i in onset..onset + world.onset_delay as usize {
        assert!(
            annealed_deltas[i].abs() > frozen_deltas[i].abs(),
            "t={}: annealed {} not above frozen {}",
            i + 1,
            annealed_deltas[i].abs(),
            frozen_deltas[i].abs()
        );
    }

    // Late-period second differences: annealed growth is flatter.
    let second_diff_max = |deltas: &[Money], from: usize| -> Money {
        let mut max = Money::ZERO;
        for i in from..deltas.len() - 1 {
            let dd = (deltas[i + 1] - deltas[i]) - (deltas[i] - deltas[i - 1]);
            max = max.max(dd.abs());
        }
        max
    };
    let late = deltas_late_start(frozen_deltas.len());
    let frozen_dd = second_diff_max(&frozen_deltas, late);
    let annealed_dd = second_diff_max(&annealed_deltas, late);
    assert!(
        annealed_dd < frozen_dd,
        "late second differences: annealed {annealed_dd} not below frozen {frozen_dd}"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    pass(
        4,
        &format!(
            "annealed run larger early, flatter late ({annealed_dd} < {frozen_dd}) in {elapsed:?}"
        ),
    );
}

/// Final quarter of the run counts as "late".
fn deltas_late_start(len: usize) -> usize {
    len * 3 / 4
}

/// Criterion 5: global conservation after every settlement step of every
/// mechanism, with bit-exact audit replay.
#[test]
fn criterion_05_ledger_conservation_everywhere() {
    let fixed_model = model(1.0, 0.0, 0.0);
    let world = DamageWorld {
        a2: 1.0,
        a4: 0.02,
        onset_delay: 2,
        sigma: 0.6,
        horizon: 30,
        discount_rate: 0.02,
    };
    let mut configs: Vec<ScenarioConfig> = Vec::new();

    let base = ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: "conservation".into(),
        mechanism: MechanismKind::IdealizedRecap,
        world,
        agency: agency(fixed_model),
        agents: AgentsConfig {
            polluters: vec![polluter(2, 0.08, 100_000.0), polluter(1, 0.0, 100_000.0)],
            insurers: vec![insurer(model(1.0, 0.02, 0.0), 3_000.0, 200.0, 10)],
            suppliers: vec![SupplierConfig {
                credits_per_year: 5,
                ask_price: 60.0,
                breakthrough_fraction: 0.3,
                breakthrough_ask_price: Some(80.0),
            }],
        },
        market: MarketConfig::default(),
        baseline: BaselineConfig::default(),
        years: 15,
        seeds: vec![1],
    };

    configs.push(base.clone());
    let mut insured = base.clone();
    insured.mechanism = MechanismKind::InsuredRecap;
    configs.push(insured);
    let mut precap = base.clone();
    precap.mechanism = MechanismKind::Precap;
    precap.agents.polluters[0].bids = vec![BidStep {
        price: 3_000.0,
        volume: 4,
    }];
    configs.push(precap);
    let mut fixed = base.clone();
    fixed.mechanism = MechanismKind::FixedTax;
    configs.push(fixed);
    let mut reserves = base.clone();
    reserves.mechanism = MechanismKind::Reserves;
    reserves.baseline.reserves = Some(ReservesConfig {
        reserve_rate: 0.5,
        window: 3,
        sectors: vec![SectorSeriesConfig {
            sector: 1,
            gdp: (0..15).map(|i| 100.0 + i as f64).collect(),
            fines: vec![FineSeriesConfig {
                scale: 0,
                values: vec![12.0; 15],
            }],
        }],
        companies: vec![
            CompanyConfig {
                sector: 1,
                scale: 0
            };
            2
        ],
    });
    configs.push(reserves);
    let mut vp = base.clone();
    vp.mechanism = MechanismKind::Vpdollar;
    vp.baseline.vpdollar = Some(VpdollarConfig {
        upper_bound: 8.0,
        holders: vec![
            VoucherHolderConfig {
                base_bid: 5.0,
                jitter: 2.0,
                volume: 2,
            },
            VoucherHolderConfig {
                base_bid: 9.0,
                jitter: 2.0,
                volume: 1,
            },
        ],
    });
    configs.push(vp);

    for config in &configs {
        // The engine audits after every settlement year; a conservation
        // break inside the run would abort it.
        let output = run_scenario(config, 13).expect("run with per-year audits");
        let replay = run_scenario(config, 13).unwrap();
        assert_eq!(
            output.ledger.entries(),
            replay.ledger.entries(),
            "{}: replay not bit-exact",
            config.mechanism.label()
        );
        let mut csv = Vec::new();
        output.ledger.write_csv(&mut csv).unwrap();
        audit_csv(csv.as_slice()).expect("exported stream audits clean");
        let report = output.ledger.audit().unwrap();
        assert_eq!(report.opening_total, report.closing_total);
    }
    pass(
        5,
        "conservation and bit-exact replay across all six mechanisms",
    );
}

/// Criterion 6: on 500 random small instances, clearing matches the
/// exhaustive-enumeration oracle's surplus and winner set, in under 30 s.
#[test]
fn criterion_06_auction_matches_brute_force() {
    let started = Instant::now();
    let no_cap = Money::from_units(1_000);
    for seed in 0..500u64 {
        let instance = common::random_instance(seed, true);
        let mut next_id = 0;
        let outcome = clear_auction(
            &instance.book,
            &instance.registry,
            0,
            0.0,
            no_cap,
            30,
            &mut next_id,
        )
        .unwrap();
        let cleared_surplus: Money = outcome
            .trades
            .iter()
            .map(|t| {
                let bid = instance
                    .book
                    .orders()
                    .iter()
                    .find(|o| o.seq == t.bid_seq)
                    .unwrap();
                bid.price_micro - t.effective_price()
            })
            .sum();
        let oracle = common::oracle_clear(&instance.book, &instance.registry);
        assert_eq!(
            cleared_surplus, oracle.surplus,
            "seed {seed}: surplus {cleared_surplus} vs oracle {}",
            oracle.surplus
        );
        let mut cleared: Vec<common::OracleTrade> = outcome
            .trades
            .iter()
            .map(|t| common::OracleTrade {
                bid_seq: t.bid_seq,
                ask_seq: t.ask_seq,
                premium_seq: t.premium_seq,
            })
            .collect();
        cleared.sort();
        let mut expected = oracle.trades.clone();
        expected.sort();
        assert_eq!(cleared, expected, "seed {seed}: winner sets differ");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    pass(
        6,
        &format!("500 instances match the enumeration oracle in {elapsed:?}"),
    );
}

fn shortfall_world() -> DamageWorld {
    DamageWorld {
        a2: 1.0,
        a4: 0.05,
        onset_delay: 2,
        sigma: 0.5,
        horizon: 40,
        discount_rate: 0.0,
    }
}

fn shortfall_config(mechanism: MechanismKind) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: "shortfall".into(),
        mechanism,
        world: shortfall_world(),
        agency: AgencyConfig {
            window: 25,
            ..agency(model(1.0, 0.0, 0.0))
        },
        agents: AgentsConfig {
            polluters: (0..5).map(|_| polluter(2, 0.05, 1_000_000.0)).collect(),
            insurers: vec![insurer(model(1.0, 0.05, 0.0), 10_000_000.0, 1_000.0, 50)],
            suppliers: Vec::new(),
        },
        market: MarketConfig::default(),
        baseline: BaselineConfig::default(),
        years: 25,
        seeds: Vec::new(),
    }
}

/// Criterion 7: with polluter defaults and solvent insurers, insured
/// retro-taxation strictly dominates the idealized variant on expected
/// government shortfall, with a one-sided 95% bootstrap excluding zero.
#[test]
fn criterion_07_insured_shortfall_dominance() {
    let seeds: Vec<u64> = (0..1_000).collect();
    let idealized = run_seeds(&shortfall_config(MechanismKind::IdealizedRecap), &seeds).unwrap();
    let insured_runs = run_seeds(&shortfall_config(MechanismKind::InsuredRecap), &seeds).unwrap();
    let diffs: Vec<f64> = idealized
        .iter()
        .zip(&insured_runs)
        .map(|(a, b)| {
            let ideal = a.shortfall_total.last().unwrap().to_f64();
            let ins = b.shortfall_total.last().unwrap().to_f64();
            ideal - ins
        })
        .collect();
    let (mean_diff, _) = common::mean_sd(&diffs);
    assert!(
        mean_diff > 0.0,
        "mean shortfall difference {mean_diff} not positive"
    );
    let lower = common::bootstrap_mean_quantile(&diffs, 2_000, 0.05, 99);
    assert!(
        lower > 0.0,
        "bootstrap 5th percentile {lower} does not exclude zero"
    );
    // Solvency premise: the insurer never defaulted.
    assert!(insured_runs
        .iter()
        .all(|r| *r.insurer_defaults.last().unwrap() == 0));
    pass(
        7,
        &format!(
            "insured shortfall dominates (mean diff {mean_diff:.2}, bootstrap lower {lower:.2})"
        ),
    );
}

/// Criterion 8: the accurate insurer takes at least 90% of matched volume
/// against an equally-margined misspecified competitor in at least 95% of
/// 200 fifty-year runs.
#[test]
fn criterion_08_accurate_insurer_wins_volume() {
    let world = DamageWorld {
        a2: 1.0,
        a4: 0.1,
        onset_delay: 0,
        sigma: 0.5,
        horizon: 50,
        discount_rate: 0.02,
    };
    let config = ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: "competition".into(),
        mechanism: MechanismKind::InsuredRecap,
        world,
        agency: AgencyConfig {
            window: 10,
            ..agency(model(1.0, 0.0, 0.0))
        },
        agents: AgentsConfig {
            polluters: (0..5).map(|_| polluter(2, 0.0, 100_000_000.0)).collect(),
            insurers: vec![
                // Accurate: fully annealed onto the true process.
                insurer(model(1.0, 0.0, 1.0), 1_000_000.0, 1_000.0, 50),
                // Misspecified: shares the agency's blind spot.
                insurer(model(1.0, 0.0, 0.0), 25.0, 5.0, 50),
            ],
            suppliers: Vec::new(),
        },
        market: MarketConfig::default(),
        baseline: BaselineConfig::default(),
        years: 50,
        seeds: Vec::new(),
    };
    let seeds: Vec<u64> = (0..200).collect();
    let runs = run_seeds(&config, &seeds).unwrap();
    let mut wins = 0u32;
    for run in &runs {
        let volumes: BTreeMap<u32, u64> = run
            .insurer_volumes
            .iter()
            .map(|(id, v)| (id.index, *v))
            .collect();
        let accurate = volumes[&0] as f64;
        let total = (volumes[&0] + volumes[&1]) as f64;
        if accurate / total >= 0.9 {
            wins += 1;
        }
    }
    assert!(
        wins >= 190,
        "accurate insurer reached 90% share in only {wins}/200 runs"
    );
    pass(
        8,
        &format!("accurate insurer captured >=90% volume in {wins}/200 runs"),
    );
}

fn truthful_precap(years: u32, sigma: f64) -> ScenarioConfig {
    let world = DamageWorld {
        a2: 1.0,
        a4: 0.02,
        onset_delay: 2,
        sigma,
        horizon: 30,
        discount_rate: 0.03,
    };
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: "truthful".into(),
        mechanism: MechanismKind::Precap,
        world,
        agency: agency(model(1.0, 0.0, 0.0)),
        agents: AgentsConfig {
            polluters: vec![PolluterConfig {
                tonnes_per_year: 0,
                default_hazard: 0.0,
                initial_cash: 10_000_000.0,
                bids: vec![BidStep {
                    price: 5_000.0,
                    volume: 5,
                }],
            }],
            insurers: vec![InsurerConfig {
                model: model(1.0, 0.0, 1.0),
                cost_margin: 0.0,
                profit_margin: 0.0,
                supply_volume: 10,
                supply_markups: Vec::new(),
                initial_cash: 1_000_000.0,
                default_fund: 0.0,
                solvency_sensitivity: 0.0,
            }],
            suppliers: vec![SupplierConfig {
                credits_per_year: 5,
                ask_price: 50.0,
                breakthrough_fraction: 0.0,
                breakthrough_ask_price: None,
            }],
        },
        market: MarketConfig {
            breakthrough_quota: 0.0,
            cap_horizon: 30,
            ..Default::default()
        },
        baseline: BaselineConfig::default(),
        years,
        seeds: Vec::new(),
    }
}

/// Criterion 9: under truthful quoting the extracted signal equals
/// oracle minus initial estimate exactly when noise-free, and within the
/// 2 sd / sqrt(N) band over 10^3 noisy seeds.
#[test]
fn criterion_09_signal_recovers_the_scc_gap() {
    // Exact, noise-free part.
    let config = truthful_precap(5, 0.0);
    let output = run_scenario(&config, 7).unwrap();
    assert_eq!(output.rounds.len(), 5);
    for round in &output.rounds {
        let signal = round.signal.expect("trades every round");
        let initial = output.estimates.get(round.time, round.time).unwrap().value;
        let oracle = output.oracles[&round.time];
        assert_eq!(
            signal.value,
            oracle - initial,
            "round {}: signal does not equal oracle - initial exactly",
            round.time
        );
    }

    // Statistical part with noise on.
    let noisy = truthful_precap(1, 0.5);
    let diffs: Vec<f64> = (0..1_000u64)
        .into_par_iter()
        .map(|seed| {
            let output = run_scenario(&noisy, seed).unwrap();
            let round = &output.rounds[0];
            let signal = round.signal.unwrap().value;
            let initial = output.estimates.get(0, 0).unwrap().value;
            let oracle = output.oracles[&0];
            (signal - (oracle - initial)).to_f64()
        })
        .collect();
    let (mean, sd) = common::mean_sd(&diffs);
    let band = 2.0 * sd / (diffs.len() as f64).sqrt();
    assert!(
        mean.abs() <= band,
        "noisy signal bias {mean} outside band {band}"
    );
    pass(
        9,
        &format!(
            "signal equals oracle-minus-initial exactly; noisy bias {mean:.4} within {band:.4}"
        ),
    );
}

/// Criterion 10: no swap cash flow past 30 years after its vintage, no
/// basket below the 10% breakthrough quota, no breakthrough trade above
/// the 100-per-tonne cap, on a full exchange run.
#[test]
fn criterion_10_cap_and_quota_enforcement() {
    let world = DamageWorld {
        a2: 1.0,
        a4: 0.02,
        onset_delay: 2,
        sigma: 0.4,
        horizon: 45,
        discount_rate: 0.02,
    };
    let config = ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: "enforcement".into(),
        mechanism: MechanismKind::Precap,
        world,
        agency: agency(model(1.0, 0.0, 0.0)),
        agents: AgentsConfig {
            polluters: vec![PolluterConfig {
                tonnes_per_year: 0,
                default_hazard: 0.0,
                initial_cash: 100_000_000.0,
                bids: vec![BidStep {
                    price: 5_000.0,
                    volume: 8,
                }],
            }],
            insurers: vec![insurer(model(1.0, 0.02, 0.0), 10_000_000.0, 1_000.0, 12)],
            suppliers: vec![SupplierConfig {
                credits_per_year: 10,
                ask_price: 60.0,
                breakthrough_fraction: 0.3,
                breakthrough_ask_price: Some(95.0),
            }],
        },
        market: MarketConfig {
            breakthrough_quota: 0.1,
            scc_cap: 100.0,
            cap_horizon: 30,
            ..Default::default()
        },
        baseline: BaselineConfig::default(),
        years: 35,
        seeds: Vec::new(),
    };
    let output = run_scenario(&config, 17).unwrap();

    // (a) Zero swap cash flows beyond the 30-year cap.
    let vintages: BTreeMap<u64, u32> = output.contracts.iter().map(|c| (c.id, c.vintage)).collect();
    let mut swap_flows = 0u32;
    for report in &output.reports {
        for record in &report.records {
            if matches!(record.reason, EntryReason::SwapLeg | EntryReason::Refund) {
                let vintage = vintages[&record.contract.unwrap()];
                assert!(
                    record.time > vintage && record.time - vintage <= 30,
                    "swap flow at {} for vintage {vintage} crosses the cap",
                    record.time
                );
                swap_flows += 1;
            }
        }
    }
    assert!(swap_flows > 0);
    // Early contracts outlive their exposure window inside the run.
    assert!(output
        .contracts
        .iter()
        .any(|c| c.status == retrocap::mechanisms::SwapStatus::Matured));

    // (b) Every basket meets the 10% quota; (c) no breakthrough trade
    // above the 100 cap.
    let cap = Money::from_units(100);
    let mut baskets_checked = 0u32;
    for round in &output.rounds {
        let mut per_buyer: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        for trade in &round.trades {
            let entry = per_buyer.entry(trade.buyer.to_string()).or_default();
            entry.0 += 1;
            if trade.is_breakthrough {
                entry.1 += 1;
                assert!(
                    trade.credit_price <= cap,
                    "breakthrough trade above the cap"
                );
            }
        }
        for (_, (total, bt)) in per_buyer {
            assert!(bt >= (0.1 * total as f64).ceil() as u64);
            baskets_checked += 1;
        }
    }
    assert!(baskets_checked > 0);
    pass(
        10,
        &format!(
            "{swap_flows} swap flows inside the cap, {baskets_checked} baskets meet the quota"
        ),
    );
}

/// Criterion 11: the epistemic estimate shrinks with sample size in at
/// least 95% of 200 trials, while the aleatoric estimate stays within 10%
/// of the generator's variance at n = 10^4.
#[test]
fn criterion_11_uncertainty_decomposition() {
    use rand::Rng;
    use rand_distr::{Distribution, Normal};
    use retrocap::regression::{decompose_uncertainty, Observation};
    use retrocap::rng::{stream_rng, StreamDomain};

    let beta = [2.0, 0.7];
    let generate = |n: usize, seed: u64| -> Vec<Observation> {
        let mut rng = stream_rng(seed, StreamDomain::Auxiliary, 31);
        let noise = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| {
                let inputs: Vec<f64> = (0..beta.len())
                    .map(|_| rng.random_range(-3.0..3.0))
                    .collect();
                let mean: f64 = inputs.iter().zip(&beta).map(|(x, b)| x * b).sum();
                Observation::new(inputs, mean + noise.sample(&mut rng))
            })
            .collect()
    };

    let trials = 200u64;
    let ordered: u32 = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let holdout = generate(4_000, 1_000 + trial);
            let small = generate(20, 10_000 + trial);
            let large = generate(2_000, 20_000 + trial);
            let e_small = decompose_uncertainty(&small, &holdout, Some(&beta))
                .unwrap()
                .epistemic;
            let e_large = decompose_uncertainty(&large, &holdout, Some(&beta))
                .unwrap()
                .epistemic;
            u32::from(e_small > e_large)
        })
        .sum();
    assert!(
        ordered >= 190,
        "epistemic ordering held in only {ordered}/200 trials"
    );

    let train = generate(10_000, 5);
    let holdout = generate(2_000, 6);
    let with_truth = decompose_uncertainty(&train, &holdout, Some(&beta)).unwrap();
    assert!(
        (with_truth.aleatoric - 1.0).abs() < 0.1,
        "aleatoric {} off the generator variance",
        with_truth.aleatoric
    );
    let blind = decompose_uncertainty(&train, &holdout, None).unwrap();
    assert!((blind.aleatoric - 1.0).abs() < 0.1);
    pass(
        11,
        &format!(
            "epistemic ordered in {ordered}/200 trials, aleatoric {:.3} within 10%",
            with_truth.aleatoric
        ),
    );
}
