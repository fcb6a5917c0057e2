//! Exact double-entry accounting shared by all mechanisms.
//!
//! Every cash movement in a run is a balanced entry: the debit account pays,
//! the credit account receives, amounts are strictly positive [`Money`].
//! Nothing is ever minted or destroyed mid-run; unpaid obligations are
//! financed from explicit sink accounts so that the global sum of balances
//! stays constant and auditable after every settlement step.

use crate::money::Money;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

/// Simulation time index, one step per settlement year.
pub type Year = u32;

/// Kinds of named agents a scenario can instantiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Polluter,
    Insurer,
    Supplier,
}

/// Stable identity of one agent within a run. Serializes as its label,
/// e.g. `"insurer-2"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId {
    pub kind: AgentKind,
    pub index: u32,
}

impl AgentId {
    pub fn polluter(index: u32) -> Self {
        AgentId {
            kind: AgentKind::Polluter,
            index,
        }
    }
    pub fn insurer(index: u32) -> Self {
        AgentId {
            kind: AgentKind::Insurer,
            index,
        }
    }
    pub fn supplier(index: u32) -> Self {
        AgentId {
            kind: AgentKind::Supplier,
            index,
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            AgentKind::Polluter => "polluter",
            AgentKind::Insurer => "insurer",
            AgentKind::Supplier => "supplier",
        };
        write!(f, "{}-{}", kind, self.index)
    }
}

impl FromStr for AgentId {
    type Err = ParsePartyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParsePartyError(s.to_string());
        let (kind, index) = s.rsplit_once('-').ok_or_else(bad)?;
        let index = index.parse().map_err(|_| bad())?;
        let kind = match kind {
            "polluter" => AgentKind::Polluter,
            "insurer" => AgentKind::Insurer,
            "supplier" => AgentKind::Supplier,
            _ => return Err(bad()),
        };
        Ok(AgentId { kind, index })
    }
}

impl Serialize for AgentId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AgentId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Account owner: an agent, a system role, or a loss sink. Serializes as
/// its label, e.g. `"government"` or `"reserve:insurer-1"`.
///
/// Sinks let defaults stay inside the closed system: when an obligation
/// cannot be paid, the sink finances the gap, its balance goes negative, and
/// `-balance` is exactly the cumulative loss of that kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Party {
    Government,
    Exchange,
    /// Absorbs carbon charges that bankrupt polluters never paid.
    ShortfallSink,
    /// Absorbs swap legs that defaulted insurers (or a broke exchange) never paid.
    BailoutLossSink,
    Agent(AgentId),
    /// Escrowed reserve posted by an agent (default fund, pollution reserve).
    Reserve(AgentId),
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Government => write!(f, "government"),
            Party::Exchange => write!(f, "exchange"),
            Party::ShortfallSink => write!(f, "shortfall-sink"),
            Party::BailoutLossSink => write!(f, "bailout-sink"),
            Party::Agent(id) => write!(f, "{id}"),
            Party::Reserve(id) => write!(f, "reserve:{id}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid party label: {0}")]
pub struct ParsePartyError(String);

impl FromStr for Party {
    type Err = ParsePartyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "government" => Ok(Party::Government),
            "exchange" => Ok(Party::Exchange),
            "shortfall-sink" => Ok(Party::ShortfallSink),
            "bailout-sink" => Ok(Party::BailoutLossSink),
            other => if let Some(rest) = other.strip_prefix("reserve:") {
                rest.parse().map(Party::Reserve)
            } else {
                other.parse().map(Party::Agent)
            }
            .map_err(|_| ParsePartyError(s.to_string())),
        }
    }
}

impl Serialize for Party {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Party {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Handle to an opened account.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AccountId(u32);

/// Why an entry was posted. Serialized to the fixed CSV reason codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryReason {
    InitialTax,
    Premium,
    SwapLeg,
    Refund,
    Reserve,
    Trade,
    Shortfall,
    BailoutLoss,
}

impl EntryReason {
    pub fn code(self) -> &'static str {
        match self {
            EntryReason::InitialTax => "initial-tax",
            EntryReason::Premium => "premium",
            EntryReason::SwapLeg => "swap-leg",
            EntryReason::Refund => "refund",
            EntryReason::Reserve => "reserve",
            EntryReason::Trade => "trade",
            EntryReason::Shortfall => "shortfall",
            EntryReason::BailoutLoss => "bailout-loss",
        }
    }
}

impl FromStr for EntryReason {
    type Err = ParseReasonError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "initial-tax" => EntryReason::InitialTax,
            "premium" => EntryReason::Premium,
            "swap-leg" => EntryReason::SwapLeg,
            "refund" => EntryReason::Refund,
            "reserve" => EntryReason::Reserve,
            "trade" => EntryReason::Trade,
            "shortfall" => EntryReason::Shortfall,
            "bailout-loss" => EntryReason::BailoutLoss,
            other => return Err(ParseReasonError(other.to_string())),
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid reason code: {0}")]
pub struct ParseReasonError(String);

/// One balanced movement of money. Append-only, strictly increasing `seq`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub seq: u64,
    pub time: Year,
    pub debit: AccountId,
    pub credit: AccountId,
    pub amount: Money,
    pub reason: EntryReason,
    // Running balances recorded at post time; lets an audit pin tampering
    // to the exact seq instead of only noticing at the end of replay.
    debit_after: Money,
    credit_after: Money,
}

#[derive(Debug, Clone)]
struct Account {
    party: Party,
    balance: Money,
    opening: Money,
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("unknown account {0}")]
    UnknownAccount(String),
    #[error("account for {0} already exists")]
    DuplicateAccount(Party),
    #[error("entry amount must be strictly positive, got {0}")]
    NonPositiveAmount(Money),
    #[error("debit and credit accounts must differ")]
    SelfTransfer,
}

/// Audit failure, pointing at the first offending entry when one exists.
#[derive(Debug, thiserror::Error)]
#[error("ledger audit failed at seq {seq:?}: {detail}")]
pub struct AuditFailure {
    pub seq: Option<u64>,
    pub detail: String,
}

/// Summary returned by a passing audit.
#[derive(Debug, Clone)]
pub struct AuditReport {
    pub entries: u64,
    pub opening_total: Money,
    pub closing_total: Money,
    pub balances: Vec<(Party, Money)>,
}

/// The double-entry ledger. Single writer, append-only entry stream.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    accounts: Vec<Account>,
    index: HashMap<Party, AccountId>,
    entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Open an account with an opening balance (capital endowment). The
    /// opening balance joins the conserved total.
    pub fn open_account(&mut self, party: Party, opening: Money) -> Result<AccountId, LedgerError> {
        if self.index.contains_key(&party) {
            return Err(LedgerError::DuplicateAccount(party));
        }
        let id = AccountId(self.accounts.len() as u32);
        self.accounts.push(Account {
            party,
            balance: opening,
            opening,
        });
        self.index.insert(party, id);
        Ok(id)
    }

    pub fn account_id(&self, party: &Party) -> Option<AccountId> {
        self.index.get(party).copied()
    }

    /// Account id for `party`, opening it with a zero balance on first use.
    pub fn ensure_account(&mut self, party: Party) -> AccountId {
        match self.index.get(&party) {
            Some(id) => *id,
            None => self
                .open_account(party, Money::ZERO)
                .expect("account checked absent"),
        }
    }

    pub fn balance(&self, id: AccountId) -> Money {
        self.accounts[id.0 as usize].balance
    }

    pub fn balance_of(&self, party: &Party) -> Money {
        self.index
            .get(party)
            .map(|id| self.balance(*id))
            .unwrap_or(Money::ZERO)
    }

    pub fn party(&self, id: AccountId) -> Party {
        self.accounts[id.0 as usize].party
    }

    pub fn total_balance(&self) -> Money {
        self.accounts.iter().map(|a| a.balance).sum()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Post one balanced entry: `debit` pays `amount` to `credit`.
    pub fn post(
        &mut self,
        time: Year,
        debit: AccountId,
        credit: AccountId,
        amount: Money,
        reason: EntryReason,
    ) -> Result<u64, LedgerError> {
        if debit == credit {
            return Err(LedgerError::SelfTransfer);
        }
        if !amount.is_positive() {
            return Err(LedgerError::NonPositiveAmount(amount));
        }
        let n = self.accounts.len() as u32;
        if debit.0 >= n {
            return Err(LedgerError::UnknownAccount(format!("#{}", debit.0)));
        }
        if credit.0 >= n {
            return Err(LedgerError::UnknownAccount(format!("#{}", credit.0)));
        }
        let seq = self.entries.len() as u64 + 1;
        self.accounts[debit.0 as usize].balance -= amount;
        self.accounts[credit.0 as usize].balance += amount;
        self.entries.push(LedgerEntry {
            seq,
            time,
            debit,
            credit,
            amount,
            reason,
            debit_after: self.accounts[debit.0 as usize].balance,
            credit_after: self.accounts[credit.0 as usize].balance,
        });
        Ok(seq)
    }

    /// Convenience transfer by party, resolving (never creating) accounts.
    pub fn transfer(
        &mut self,
        time: Year,
        from: Party,
        to: Party,
        amount: Money,
        reason: EntryReason,
    ) -> Result<u64, LedgerError> {
        let debit = self
            .account_id(&from)
            .ok_or_else(|| LedgerError::UnknownAccount(from.to_string()))?;
        let credit = self
            .account_id(&to)
            .ok_or_else(|| LedgerError::UnknownAccount(to.to_string()))?;
        self.post(time, debit, credit, amount, reason)
    }

    /// Replay the entry stream from opening balances and verify: per-entry
    /// structure, recorded running balances, final live balances, and global
    /// conservation.
    pub fn audit(&self) -> Result<AuditReport, AuditFailure> {
        let mut replay: Vec<Money> = self.accounts.iter().map(|a| a.opening).collect();
        let mut last_seq = 0u64;
        for entry in &self.entries {
            let fail = |detail: String| AuditFailure {
                seq: Some(entry.seq),
                detail,
            };
            if entry.seq <= last_seq {
                return Err(fail(format!(
                    "seq not strictly increasing after {last_seq}"
                )));
            }
            last_seq = entry.seq;
            if !entry.amount.is_positive() {
                return Err(fail(format!("non-positive amount {}", entry.amount)));
            }
            if entry.debit == entry.credit {
                return Err(fail("debit equals credit".to_string()));
            }
            let d = entry.debit.0 as usize;
            let c = entry.credit.0 as usize;
            if d >= replay.len() || c >= replay.len() {
                return Err(fail("entry references unknown account".to_string()));
            }
            replay[d] -= entry.amount;
            replay[c] += entry.amount;
            if replay[d] != entry.debit_after || replay[c] != entry.credit_after {
                return Err(fail(format!(
                    "running balance mismatch: replayed {}/{} vs recorded {}/{}",
                    replay[d], replay[c], entry.debit_after, entry.credit_after
                )));
            }
        }
        for (i, account) in self.accounts.iter().enumerate() {
            if replay[i] != account.balance {
                return Err(AuditFailure {
                    seq: None,
                    detail: format!(
                        "live balance of {} is {}, replay gives {}",
                        account.party, account.balance, replay[i]
                    ),
                });
            }
        }
        let opening_total: Money = self.accounts.iter().map(|a| a.opening).sum();
        let closing_total = self.total_balance();
        if opening_total != closing_total {
            return Err(AuditFailure {
                seq: None,
                detail: format!(
                    "conservation violated: opening total {opening_total} vs closing {closing_total}"
                ),
            });
        }
        Ok(AuditReport {
            entries: self.entries.len() as u64,
            opening_total,
            closing_total,
            balances: self.accounts.iter().map(|a| (a.party, a.balance)).collect(),
        })
    }

    /// Export the entry stream with the fixed column order
    /// `seq,time,debit,credit,amount_micro,reason`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["seq", "time", "debit", "credit", "amount_micro", "reason"])?;
        for e in &self.entries {
            w.write_record([
                e.seq.to_string(),
                e.time.to_string(),
                self.party(e.debit).to_string(),
                self.party(e.credit).to_string(),
                e.amount.micros().to_string(),
                e.reason.code().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> csv::Result<()> {
        let file = std::fs::File::create(path).map_err(csv::Error::from)?;
        self.write_csv(io::BufWriter::new(file))
    }

    #[cfg(test)]
    pub(crate) fn tamper_amount_for_test(&mut self, seq: u64, amount: Money) {
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.seq == seq)
            .expect("seq present");
        entry.amount = amount;
    }
}

/// A row parsed back from an exported ledger CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvEntry {
    pub seq: u64,
    pub time: Year,
    pub debit: Party,
    pub credit: Party,
    pub amount: Money,
    pub reason: EntryReason,
}

/// Replay verdict for an imported entry stream.
#[derive(Debug, Clone)]
pub struct CsvAudit {
    pub entries: u64,
    /// Net balance change per party implied by the stream.
    pub net_by_party: Vec<(Party, Money)>,
}

/// Parse and structurally audit an exported ledger CSV: header, strictly
/// increasing seq, positive amounts, distinct debit/credit, known labels.
/// Net flows sum to zero by construction of balanced entries; the replayed
/// per-party nets are returned for inspection.
pub fn audit_csv<R: io::Read>(reader: R) -> Result<CsvAudit, AuditFailure> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let expected = ["seq", "time", "debit", "credit", "amount_micro", "reason"];
    let headers = r.headers().map_err(|e| AuditFailure {
        seq: None,
        detail: format!("unreadable header: {e}"),
    })?;
    if headers.iter().ne(expected) {
        return Err(AuditFailure {
            seq: None,
            detail: format!("unexpected header {:?}", headers),
        });
    }
    let mut nets: HashMap<Party, Money> = HashMap::new();
    let mut order: Vec<Party> = Vec::new();
    let mut last_seq = 0u64;
    let mut count = 0u64;
    for record in r.records() {
        let record = record.map_err(|e| AuditFailure {
            seq: Some(last_seq + 1),
            detail: format!("unreadable record: {e}"),
        })?;
        let entry = parse_record(&record).map_err(|detail| AuditFailure {
            seq: Some(last_seq + 1),
            detail,
        })?;
        let fail = |detail: String| AuditFailure {
            seq: Some(entry.seq),
            detail,
        };
        if entry.seq <= last_seq {
            return Err(fail(format!(
                "seq not strictly increasing after {last_seq}"
            )));
        }
        last_seq = entry.seq;
        if !entry.amount.is_positive() {
            return Err(fail(format!("non-positive amount {}", entry.amount)));
        }
        if entry.debit == entry.credit {
            return Err(fail("debit equals credit".to_string()));
        }
        for party in [entry.debit, entry.credit] {
            nets.entry(party).or_insert_with(|| {
                order.push(party);
                Money::ZERO
            });
        }
        *nets.get_mut(&entry.debit).unwrap() -= entry.amount;
        *nets.get_mut(&entry.credit).unwrap() += entry.amount;
        count += 1;
    }
    let total: Money = nets.values().copied().sum();
    if !total.is_zero() {
        return Err(AuditFailure {
            seq: None,
            detail: format!("net flows do not cancel: {total}"),
        });
    }
    Ok(CsvAudit {
        entries: count,
        net_by_party: order.into_iter().map(|p| (p, nets[&p])).collect(),
    })
}

fn parse_record(record: &csv::StringRecord) -> Result<CsvEntry, String> {
    if record.len() != 6 {
        return Err(format!("expected 6 columns, got {}", record.len()));
    }
    let seq = record[0]
        .parse()
        .map_err(|_| format!("bad seq {:?}", &record[0]))?;
    let time = record[1]
        .parse()
        .map_err(|_| format!("bad time {:?}", &record[1]))?;
    let debit = record[2].parse().map_err(|e| format!("{e}"))?;
    let credit = record[3].parse().map_err(|e| format!("{e}"))?;
    let micros: i64 = record[4]
        .parse()
        .map_err(|_| format!("bad amount_micro {:?}", &record[4]))?;
    let reason = record[5].parse().map_err(|e| format!("{e}"))?;
    Ok(CsvEntry {
        seq,
        time,
        debit,
        credit,
        amount: Money::from_micros(micros),
        reason,
    })
}
