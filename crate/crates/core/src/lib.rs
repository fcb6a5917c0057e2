//! Deterministic agent-based simulator of retroactive carbon-pricing
//! mechanisms.
//!
//! The library models a world in which the social cost of carbon is never
//! known at emission time: an independent agency publishes vintage-indexed
//! estimates that are revised year after year as damages are actually
//! measured, and market mechanisms decide who carries those revisions.
//!
//! - [`damage`]: the ground-truth marginal damage process and the
//!   (possibly misspecified) estimator models agents hold against it.
//! - [`scc`]: vintage-indexed estimates, exact retrospective adjustments,
//!   and the agency's rolling releases.
//! - [`mechanisms`]: retroactive carbon taxation: the idealized
//!   government-settled variant, the insurer-mediated variant with swap
//!   contracts, and the fixed-tax / reserves / repo-auction baselines.
//! - [`exchange`]: the private retro-exchange: an insured-carbon-credit
//!   order book, three-sided auction clearing, swap settlement with risk
//!   controls, and the premium-derived SCC signal.
//! - [`ledger`]: exact double-entry accounting beneath every mechanism.
//! - [`scenario`]: scenario configuration, the deterministic run loop,
//!   metric extraction, and file output.
//!
//! Every run is a pure function of `(config, seed)`; random streams are
//! split per vintage and per agent so that editing one part of a scenario
//! never reshuffles the rest.

pub mod damage;
pub mod exchange;
pub mod ledger;
pub mod mechanisms;
pub mod money;
pub mod regression;
pub mod rng;
pub mod scc;
pub mod scenario;

pub use damage::{DamageHistory, DamageWorld, EstimatorModel, MeasuredDamage};
pub use ledger::{AgentId, AgentKind, EntryReason, Ledger, Party, Year};
pub use money::Money;
pub use scc::{Adjustment, RetroAgencyRelease, SccEstimate};
pub use scenario::{run_scenario, sweep, RunMetrics, ScenarioConfig};
