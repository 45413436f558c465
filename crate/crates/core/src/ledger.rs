//! Double-entry balance sheets for every agent in the simulated system.
//!
//! A [`LedgerWorld`] holds one [`BalanceSheet`] per agent. Claims between
//! agents (reserves, deposits, repo, stablecoins, redemption payables) are
//! always recorded twice: as an asset of the creditor keyed by the debtor and
//! as a liability of the debtor keyed by the creditor. Treasury securities are
//! the only external assets; they are stored as face amounts and valued at the
//! world's per-class price marks.
//!
//! All mutation goes through [`LedgerWorld::apply`], which validates a batch
//! of [`Op`]s against a scratch copy and commits only if every resulting
//! position is non-negative. A failed batch leaves the world untouched.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::money::{Amount, Fraction};

/// Business-day index.
pub type Day = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Fed,
    Bank,
    BrokerDealer,
    Issuer,
    Intermediary,
    Holder,
    TreasuryBuyer,
}

impl AgentKind {
    pub fn label(self) -> &'static str {
        match self {
            AgentKind::Fed => "fed",
            AgentKind::Bank => "bank",
            AgentKind::BrokerDealer => "dealer",
            AgentKind::Issuer => "issuer",
            AgentKind::Intermediary => "intermediary",
            AgentKind::Holder => "holder",
            AgentKind::TreasuryBuyer => "buyer",
        }
    }

    fn from_label(s: &str) -> Option<AgentKind> {
        Some(match s {
            "fed" => AgentKind::Fed,
            "bank" => AgentKind::Bank,
            "dealer" => AgentKind::BrokerDealer,
            "issuer" => AgentKind::Issuer,
            "intermediary" => AgentKind::Intermediary,
            "holder" => AgentKind::Holder,
            "buyer" => AgentKind::TreasuryBuyer,
            _ => return None,
        })
    }

    /// Institutions that hold reserve accounts at the Fed.
    pub fn holds_reserves(self) -> bool {
        self == AgentKind::Bank
    }

    /// Agents that bank with a commercial bank.
    pub fn is_depositor(self) -> bool {
        !matches!(self, AgentKind::Fed | AgentKind::Bank)
    }
}

/// Agent identity, unique within a world. Renders as `kind-index`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId {
    pub kind: AgentKind,
    pub index: u32,
}

impl AgentId {
    pub const FED: AgentId = AgentId { kind: AgentKind::Fed, index: 0 };

    pub const fn new(kind: AgentKind, index: u32) -> Self {
        AgentId { kind, index }
    }
    pub const fn bank(index: u32) -> Self {
        Self::new(AgentKind::Bank, index)
    }
    pub const fn dealer(index: u32) -> Self {
        Self::new(AgentKind::BrokerDealer, index)
    }
    pub const fn issuer(index: u32) -> Self {
        Self::new(AgentKind::Issuer, index)
    }
    pub const fn intermediary(index: u32) -> Self {
        Self::new(AgentKind::Intermediary, index)
    }
    pub const fn holder(index: u32) -> Self {
        Self::new(AgentKind::Holder, index)
    }
    pub const fn buyer(index: u32) -> Self {
        Self::new(AgentKind::TreasuryBuyer, index)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.kind.label(), self.index)
    }
}

impl FromStr for AgentId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, idx) = s
            .rsplit_once('-')
            .ok_or_else(|| format!("agent id `{s}` is not of the form kind-index"))?;
        let kind = AgentKind::from_label(kind).ok_or_else(|| format!("unknown agent kind `{kind}`"))?;
        let index = idx.parse().map_err(|_| format!("bad agent index in `{s}`"))?;
        Ok(AgentId { kind, index })
    }
}

impl Serialize for AgentId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AgentId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Treasury duration bucket with its own price mark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecurityClass {
    Bill,
    LongOffTheRun,
}

impl SecurityClass {
    pub const ALL: [SecurityClass; 2] = [SecurityClass::Bill, SecurityClass::LongOffTheRun];

    pub fn label(self) -> &'static str {
        match self {
            SecurityClass::Bill => "bill",
            SecurityClass::LongOffTheRun => "long",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instrument {
    /// Bank claim on the Fed.
    Reserves,
    /// Depositor claim on its bank.
    Deposit,
    /// External security, stored at face.
    Treasury { class: SecurityClass, maturity: Day },
    /// Cash lender's claim on a repo borrower (second-leg repurchase price).
    Repo,
    /// Holder claim on the issuer.
    Stablecoin { issuer: AgentId },
    /// Issuer's obligation to pay a redeemer whose coins were already retired.
    RedemptionPayable,
}

impl Instrument {
    pub fn is_treasury(self) -> bool {
        matches!(self, Instrument::Treasury { .. })
    }

    pub fn label(self) -> String {
        match self {
            Instrument::Reserves => "reserves".into(),
            Instrument::Deposit => "deposit".into(),
            Instrument::Treasury { class, maturity } => format!("treasury/{}/d{maturity}", class.label()),
            Instrument::Repo => "repo".into(),
            Instrument::Stablecoin { issuer } => format!("stablecoin/{issuer}"),
            Instrument::RedemptionPayable => "redemption_payable".into(),
        }
    }
}

/// Ledger key: an instrument and, for claims, the other side of the claim.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PositionKey {
    pub instrument: Instrument,
    pub counterparty: Option<AgentId>,
}

impl PositionKey {
    pub fn claim(instrument: Instrument, counterparty: AgentId) -> Self {
        PositionKey { instrument, counterparty: Some(counterparty) }
    }
    pub fn treasury(class: SecurityClass, maturity: Day) -> Self {
        PositionKey { instrument: Instrument::Treasury { class, maturity }, counterparty: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Asset,
    Liability,
}

/// Price per unit face for each security class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marks {
    pub bill: Fraction,
    pub long: Fraction,
}

impl Default for Marks {
    fn default() -> Self {
        Marks { bill: Fraction::ONE, long: Fraction::ONE }
    }
}

impl Marks {
    pub fn get(&self, class: SecurityClass) -> Fraction {
        match class {
            SecurityClass::Bill => self.bill,
            SecurityClass::LongOffTheRun => self.long,
        }
    }

    pub fn set(&mut self, class: SecurityClass, price: Fraction) {
        assert!(price > Fraction::ZERO, "price mark must stay positive");
        match class {
            SecurityClass::Bill => self.bill = price,
            SecurityClass::LongOffTheRun => self.long = price,
        }
    }

    /// Market value of a position, rounded once.
    pub fn value(&self, key: &PositionKey, amount: Amount) -> Amount {
        match key.instrument {
            Instrument::Treasury { class, .. } => amount.scale(self.get(class)),
            _ => amount,
        }
    }
}

/// One agent's positions. Equity is always derived.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BalanceSheet {
    assets: BTreeMap<PositionKey, Amount>,
    liabilities: BTreeMap<PositionKey, Amount>,
}

impl BalanceSheet {
    pub fn assets(&self) -> impl Iterator<Item = (&PositionKey, &Amount)> {
        self.assets.iter()
    }

    pub fn liabilities(&self) -> impl Iterator<Item = (&PositionKey, &Amount)> {
        self.liabilities.iter()
    }

    pub fn get(&self, side: Side, key: &PositionKey) -> Amount {
        let map = match side {
            Side::Asset => &self.assets,
            Side::Liability => &self.liabilities,
        };
        map.get(key).copied().unwrap_or(Amount::ZERO)
    }

    pub fn asset(&self, key: &PositionKey) -> Amount {
        self.get(Side::Asset, key)
    }

    pub fn liability(&self, key: &PositionKey) -> Amount {
        self.get(Side::Liability, key)
    }

    /// Add `delta` to a position, dropping it when it reaches zero. Bypasses
    /// double-entry; only [`LedgerWorld::apply`] and fixtures should call it.
    pub fn adjust(&mut self, side: Side, key: PositionKey, delta: Amount) {
        let map = match side {
            Side::Asset => &mut self.assets,
            Side::Liability => &mut self.liabilities,
        };
        let entry = map.entry(key).or_insert(Amount::ZERO);
        *entry += delta;
        if entry.is_zero() {
            map.remove(&key);
        }
    }

    pub fn total_assets(&self, marks: &Marks) -> Amount {
        self.assets.iter().map(|(k, a)| marks.value(k, *a)).sum()
    }

    pub fn total_liabilities(&self) -> Amount {
        self.liabilities.values().sum()
    }

    pub fn equity(&self, marks: &Marks) -> Amount {
        self.total_assets(marks) - self.total_liabilities()
    }

    /// Σ of asset positions whose instrument matches `pred`, at face.
    pub fn asset_sum(&self, pred: impl Fn(&Instrument) -> bool) -> Amount {
        self.assets.iter().filter(|(k, _)| pred(&k.instrument)).map(|(_, a)| *a).sum()
    }

    pub fn liability_sum(&self, pred: impl Fn(&Instrument) -> bool) -> Amount {
        self.liabilities.iter().filter(|(k, _)| pred(&k.instrument)).map(|(_, a)| *a).sum()
    }

    /// Treasury lots of one class as (maturity, face), earliest first.
    pub fn treasury_lots(&self, class: SecurityClass) -> Vec<(Day, Amount)> {
        self.assets
            .iter()
            .filter_map(|(k, a)| match k.instrument {
                Instrument::Treasury { class: c, maturity } if c == class => Some((maturity, *a)),
                _ => None,
            })
            .collect()
    }

    pub fn treasury_face(&self, class: SecurityClass) -> Amount {
        self.asset_sum(|i| matches!(i, Instrument::Treasury { class: c, .. } if *c == class))
    }

    pub fn treasury_value(&self, class: SecurityClass, marks: &Marks) -> Amount {
        self.treasury_face(class).scale(marks.get(class))
    }
}

/// Business-day clock with an intra-day sequence counter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Clock {
    pub day: Day,
    pub seq: u64,
}

/// Atomic ledger operation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    /// Move a transferable holding. Deposits settle through the two banks'
    /// reserve accounts when the parties bank at different institutions.
    Transfer { from: AgentId, to: AgentId, instrument: Instrument, amount: Amount },
    /// Create a claim of `creditor` on `debtor`.
    Issue { creditor: AgentId, debtor: AgentId, instrument: Instrument, amount: Amount },
    /// Cancel (part of) a claim of `creditor` on `debtor`.
    Extinguish { creditor: AgentId, debtor: AgentId, instrument: Instrument, amount: Amount },
    /// Cash payment between non-banks, resolved into deposit and reserve
    /// legs against the state at the time the batch is applied.
    Pay { from: AgentId, to: AgentId, amount: Amount },
    /// Bring external Treasuries onto an agent's books (initial endowments).
    Endow { agent: AgentId, class: SecurityClass, maturity: Day, face: Amount },
}

/// Batch of operations that settles on a given day.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledBatch {
    pub due: Day,
    /// Owner-defined reference used to route the outcome back.
    pub tag: u64,
    pub ops: Vec<Op>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("{agent} holds {available} of {key}, needs {needed}")]
    InsufficientPosition { agent: AgentId, key: String, needed: Amount, available: Amount },
    #[error("{0} has no deposit bank")]
    NoBank(AgentId),
    #[error("invalid posting: {0}")]
    InvalidPosting(String),
}

/// The full system state: every agent's balance sheet, the clock, price
/// marks and the queue of scheduled settlement batches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerWorld {
    pub clock: Clock,
    pub marks: Marks,
    agents: BTreeMap<AgentId, BalanceSheet>,
    bank_of: BTreeMap<AgentId, AgentId>,
    reserve_accounts: std::collections::BTreeSet<AgentId>,
    pending: Vec<ScheduledBatch>,
}

impl Default for LedgerWorld {
    fn default() -> Self {
        Self::new()
    }
}

impl LedgerWorld {
    /// A world containing only the Fed.
    pub fn new() -> Self {
        let mut agents = BTreeMap::new();
        agents.insert(AgentId::FED, BalanceSheet::default());
        LedgerWorld {
            clock: Clock::default(),
            marks: Marks::default(),
            agents,
            bank_of: BTreeMap::new(),
            reserve_accounts: Default::default(),
            pending: Vec::new(),
        }
    }

    pub fn add_bank(&mut self, id: AgentId) {
        assert_eq!(id.kind, AgentKind::Bank);
        self.agents.entry(id).or_default();
    }

    /// Register a depositor and the bank that holds its deposit account.
    pub fn add_depositor(&mut self, id: AgentId, bank: AgentId) {
        assert!(id.kind.is_depositor(), "{id} cannot hold deposits");
        assert!(self.agents.contains_key(&bank) && bank.kind == AgentKind::Bank, "unknown bank {bank}");
        self.agents.entry(id).or_default();
        self.bank_of.insert(id, bank);
    }

    /// Open a Fed reserve account for a non-bank (direct central-bank access).
    pub fn grant_reserve_account(&mut self, id: AgentId) {
        assert!(self.agents.contains_key(&id), "unknown agent {id}");
        self.reserve_accounts.insert(id);
    }

    /// Whether the agent may hold reserves: every bank, plus granted non-banks.
    pub fn holds_reserves(&self, id: AgentId) -> bool {
        id.kind.holds_reserves() || self.reserve_accounts.contains(&id)
    }

    pub fn contains(&self, id: AgentId) -> bool {
        self.agents.contains_key(&id)
    }

    pub fn agent_ids(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.agents.keys().copied()
    }

    pub fn agents_of(&self, kind: AgentKind) -> Vec<AgentId> {
        self.agents.keys().copied().filter(|a| a.kind == kind).collect()
    }

    pub fn sheet(&self, id: AgentId) -> Result<&BalanceSheet, LedgerError> {
        self.agents.get(&id).ok_or(LedgerError::UnknownAgent(id))
    }

    /// Direct mutable access that bypasses double-entry validation.
    /// Intended for fixtures that need to construct broken states.
    pub fn sheet_mut_unchecked(&mut self, id: AgentId) -> Option<&mut BalanceSheet> {
        self.agents.get_mut(&id)
    }

    pub fn bank_of(&self, id: AgentId) -> Result<AgentId, LedgerError> {
        self.bank_of.get(&id).copied().ok_or(LedgerError::NoBank(id))
    }

    pub fn next_seq(&mut self) -> u64 {
        self.clock.seq += 1;
        self.clock.seq
    }

    pub fn today(&self) -> Day {
        self.clock.day
    }

    pub fn advance_day(&mut self) {
        self.clock.day += 1;
        self.clock.seq = 0;
    }

    // ----- queries -------------------------------------------------------

    pub fn deposits(&self, id: AgentId) -> Amount {
        self.agents
            .get(&id)
            .map(|s| s.asset_sum(|i| *i == Instrument::Deposit))
            .unwrap_or(Amount::ZERO)
    }

    pub fn reserves(&self, bank: AgentId) -> Amount {
        self.agents
            .get(&bank)
            .map(|s| s.asset(&PositionKey::claim(Instrument::Reserves, AgentId::FED)))
            .unwrap_or(Amount::ZERO)
    }

    /// Coins in circulation for one issuer.
    pub fn coins_outstanding(&self, issuer: AgentId) -> Amount {
        self.agents
            .get(&issuer)
            .map(|s| s.liability_sum(|i| matches!(i, Instrument::Stablecoin { issuer: x } if *x == issuer)))
            .unwrap_or(Amount::ZERO)
    }

    pub fn coins_held(&self, holder: AgentId, issuer: AgentId) -> Amount {
        self.agents
            .get(&holder)
            .map(|s| s.asset(&PositionKey::claim(Instrument::Stablecoin { issuer }, issuer)))
            .unwrap_or(Amount::ZERO)
    }

    /// Σ of all deposit liabilities across banks.
    pub fn total_bank_deposits(&self) -> Amount {
        self.agents
            .iter()
            .filter(|(id, _)| id.kind == AgentKind::Bank)
            .map(|(_, s)| s.liability_sum(|i| *i == Instrument::Deposit))
            .sum()
    }

    /// Σ reserve assets over every reserve-account holder.
    pub fn total_bank_reserves(&self) -> Amount {
        self.agents
            .iter()
            .filter(|(id, _)| self.holds_reserves(**id))
            .map(|(_, s)| s.asset_sum(|i| *i == Instrument::Reserves))
            .sum()
    }

    pub fn fed_reserve_liabilities(&self) -> Amount {
        self.agents[&AgentId::FED].liability_sum(|i| *i == Instrument::Reserves)
    }

    pub fn equity(&self, id: AgentId) -> Result<Amount, LedgerError> {
        Ok(self.sheet(id)?.equity(&self.marks))
    }

    pub fn total_assets(&self, id: AgentId) -> Result<Amount, LedgerError> {
        Ok(self.sheet(id)?.total_assets(&self.marks))
    }

    /// Settlement balances usable for payments: deposits, plus reserves for
    /// non-banks with direct Fed access.
    pub fn cash(&self, id: AgentId) -> Amount {
        let reserves = if id.kind.is_depositor() && self.holds_reserves(id) { self.reserves(id) } else { Amount::ZERO };
        self.deposits(id) + reserves
    }

    /// Ops paying `amount` of cash from one non-bank to another. Payers with
    /// a reserve account pay in reserves first; a payee with a reserve
    /// account is credited in reserves.
    pub fn cash_payment(&self, from: AgentId, to: AgentId, amount: Amount) -> Result<Vec<Op>, LedgerError> {
        if amount.is_zero() || from == to {
            return Ok(Vec::new());
        }
        let from_res = from.kind.is_depositor() && self.holds_reserves(from);
        let to_res = to.kind.is_depositor() && self.holds_reserves(to);
        let (from_r, from_d) = if from_res {
            let r = self.reserves(from).min(amount);
            (r, amount - r)
        } else {
            (Amount::ZERO, amount)
        };
        let mut ops = Vec::new();
        if from_r.is_positive() {
            if to_res {
                ops.push(Op::Transfer { from, to, instrument: Instrument::Reserves, amount: from_r });
            } else {
                let bank = self.bank_of(to)?;
                ops.push(Op::Transfer { from, to: bank, instrument: Instrument::Reserves, amount: from_r });
                ops.push(Op::Issue { creditor: to, debtor: bank, instrument: Instrument::Deposit, amount: from_r });
            }
        }
        if from_d.is_positive() {
            if to_res {
                let bank = self.bank_of(from)?;
                ops.push(Op::Extinguish { creditor: from, debtor: bank, instrument: Instrument::Deposit, amount: from_d });
                ops.push(Op::Transfer { from: bank, to, instrument: Instrument::Reserves, amount: from_d });
            } else {
                ops.push(Op::Transfer { from, to, instrument: Instrument::Deposit, amount: from_d });
            }
        }
        Ok(ops)
    }

    // ----- settlement queue ------------------------------------------------

    pub fn schedule(&mut self, batch: ScheduledBatch) {
        self.pending.push(batch);
    }

    pub fn pending(&self) -> &[ScheduledBatch] {
        &self.pending
    }

    /// Remove and return batches due on or before `day`, in scheduling order.
    pub fn take_due(&mut self, day: Day) -> Vec<ScheduledBatch> {
        let (due, rest): (Vec<_>, Vec<_>) = self.pending.drain(..).partition(|b| b.due <= day);
        self.pending = rest;
        due
    }

    // ----- mutation --------------------------------------------------------

    /// Apply a batch atomically. On error the world is unchanged.
    pub fn apply(&mut self, ops: &[Op]) -> Result<(), LedgerError> {
        let mut scratch: BTreeMap<AgentId, BalanceSheet> = BTreeMap::new();
        for op in ops {
            for (agent, side, key, delta) in self.expand(op)? {
                let sheet = match scratch.entry(agent) {
                    std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                    std::collections::btree_map::Entry::Vacant(e) => {
                        let current = self.agents.get(&agent).ok_or(LedgerError::UnknownAgent(agent))?;
                        e.insert(current.clone())
                    }
                };
                sheet.adjust(side, key, delta);
            }
        }
        for (agent, sheet) in &scratch {
            for (side, map) in [(Side::Asset, &sheet.assets), (Side::Liability, &sheet.liabilities)] {
                if let Some((key, amt)) = map.iter().find(|(_, a)| a.is_negative()) {
                    let before = self.agents[agent].get(side, key);
                    return Err(LedgerError::InsufficientPosition {
                        agent: *agent,
                        key: key_label(key),
                        needed: before - *amt,
                        available: before,
                    });
                }
            }
        }
        for (agent, sheet) in scratch {
            self.agents.insert(agent, sheet);
        }
        Ok(())
    }

    /// Move a transferable holding between two agents.
    pub fn post_transfer(
        &mut self,
        from: AgentId,
        to: AgentId,
        instrument: Instrument,
        amount: Amount,
    ) -> Result<(), LedgerError> {
        self.apply(&[Op::Transfer { from, to, instrument, amount }])
    }

    fn require(&self, id: AgentId) -> Result<(), LedgerError> {
        if self.agents.contains_key(&id) {
            Ok(())
        } else {
            Err(LedgerError::UnknownAgent(id))
        }
    }

    /// Expand an op into signed single-sided adjustments.
    fn expand(&self, op: &Op) -> Result<Vec<(AgentId, Side, PositionKey, Amount)>, LedgerError> {
        use Side::*;
        let mut out = Vec::new();
        match *op {
            Op::Transfer { from, to, instrument, amount } => {
                self.require(from)?;
                self.require(to)?;
                if amount.is_negative() {
                    return Err(LedgerError::InvalidPosting("negative transfer".into()));
                }
                if amount.is_zero() || from == to {
                    return Ok(out);
                }
                match instrument {
                    Instrument::Reserves => {
                        for a in [from, to] {
                            if !self.holds_reserves(a) {
                                return Err(LedgerError::InvalidPosting(format!("{a} has no reserve account")));
                            }
                        }
                        let key = PositionKey::claim(Instrument::Reserves, AgentId::FED);
                        out.push((from, Asset, key, -amount));
                        out.push((to, Asset, key, amount));
                        out.push((AgentId::FED, Liability, PositionKey::claim(Instrument::Reserves, from), -amount));
                        out.push((AgentId::FED, Liability, PositionKey::claim(Instrument::Reserves, to), amount));
                    }
                    Instrument::Deposit => {
                        let bf = self.bank_of(from)?;
                        let bt = self.bank_of(to)?;
                        out.push((from, Asset, PositionKey::claim(Instrument::Deposit, bf), -amount));
                        out.push((bf, Liability, PositionKey::claim(Instrument::Deposit, from), -amount));
                        out.push((to, Asset, PositionKey::claim(Instrument::Deposit, bt), amount));
                        out.push((bt, Liability, PositionKey::claim(Instrument::Deposit, to), amount));
                        if bf != bt {
                            let op = Op::Transfer { from: bf, to: bt, instrument: Instrument::Reserves, amount };
                            out.extend(self.expand(&op)?);
                        }
                    }
                    Instrument::Treasury { class, maturity } => {
                        let key = PositionKey::treasury(class, maturity);
                        out.push((from, Asset, key, -amount));
                        out.push((to, Asset, key, amount));
                    }
                    Instrument::Stablecoin { issuer } => {
                        if from == issuer || to == issuer {
                            return Err(LedgerError::InvalidPosting(
                                "coins move to or from the issuer by issue/extinguish".into(),
                            ));
                        }
                        let hkey = PositionKey::claim(instrument, issuer);
                        out.push((from, Asset, hkey, -amount));
                        out.push((to, Asset, hkey, amount));
                        out.push((issuer, Liability, PositionKey::claim(instrument, from), -amount));
                        out.push((issuer, Liability, PositionKey::claim(instrument, to), amount));
                    }
                    Instrument::Repo | Instrument::RedemptionPayable => {
                        return Err(LedgerError::InvalidPosting(format!(
                            "{} claims are not transferable",
                            instrument.label()
                        )));
                    }
                }
            }
            Op::Issue { creditor, debtor, instrument, amount }
            | Op::Extinguish { creditor, debtor, instrument, amount } => {
                self.require(creditor)?;
                self.require(debtor)?;
                if amount.is_negative() {
                    return Err(LedgerError::InvalidPosting("negative claim amount".into()));
                }
                if creditor == debtor {
                    return Err(LedgerError::InvalidPosting("claim on self".into()));
                }
                match instrument {
                    Instrument::Treasury { .. } => {
                        return Err(LedgerError::InvalidPosting("treasuries are not inter-agent claims".into()))
                    }
                    Instrument::Reserves => {
                        if debtor != AgentId::FED || !self.holds_reserves(creditor) {
                            return Err(LedgerError::InvalidPosting("reserves are bank claims on the Fed".into()));
                        }
                    }
                    Instrument::Deposit => {
                        if self.bank_of(creditor)? != debtor {
                            return Err(LedgerError::InvalidPosting(format!(
                                "{creditor} banks at {}, not {debtor}",
                                self.bank_of(creditor)?
                            )));
                        }
                    }
                    Instrument::Stablecoin { issuer } => {
                        if issuer != debtor || debtor.kind != AgentKind::Issuer {
                            return Err(LedgerError::InvalidPosting("stablecoins are issuer liabilities".into()));
                        }
                    }
                    Instrument::Repo | Instrument::RedemptionPayable => {}
                }
                let sign = if matches!(op, Op::Issue { .. }) { amount } else { -amount };
                out.push((creditor, Asset, PositionKey::claim(instrument, debtor), sign));
                out.push((debtor, Liability, PositionKey::claim(instrument, creditor), sign));
            }
            Op::Pay { from, to, amount } => {
                self.require(from)?;
                self.require(to)?;
                if amount.is_negative() {
                    return Err(LedgerError::InvalidPosting("negative payment".into()));
                }
                for op in self.cash_payment(from, to, amount)? {
                    out.extend(self.expand(&op)?);
                }
            }
            Op::Endow { agent, class, maturity, face } => {
                self.require(agent)?;
                out.push((agent, Asset, PositionKey::treasury(class, maturity), face));
            }
        }
        Ok(out)
    }

    // ----- audit and snapshot -----------------------------------------------

    /// Check every ledger invariant without mutating anything.
    pub fn audit(&self) -> AuditReport {
        let mut checks = Vec::new();

        // claim mirroring plus the world net-worth identity
        let mut double_entry = AuditCheck::pass(Invariant::DoubleEntry);
        'outer: for (id, sheet) in &self.agents {
            for (key, amt) in sheet.assets.iter().filter(|(k, _)| !k.instrument.is_treasury()) {
                let Some(cp) = key.counterparty else {
                    double_entry.fail(*id, format!("claim {} without counterparty", key_label(key)));
                    break 'outer;
                };
                let mirror = self
                    .agents
                    .get(&cp)
                    .map(|s| s.liability(&PositionKey::claim(key.instrument, *id)))
                    .unwrap_or(Amount::ZERO);
                if mirror != *amt {
                    double_entry.fail(*id, format!("{} asset {amt} vs {cp} liability {mirror}", key_label(key)));
                    break 'outer;
                }
            }
            for (key, amt) in &sheet.liabilities {
                let Some(cp) = key.counterparty else {
                    double_entry.fail(*id, format!("liability {} without counterparty", key_label(key)));
                    break 'outer;
                };
                let mirror = self
                    .agents
                    .get(&cp)
                    .map(|s| s.asset(&PositionKey::claim(key.instrument, *id)))
                    .unwrap_or(Amount::ZERO);
                if mirror != *amt {
                    double_entry.fail(*id, format!("{} liability {amt} vs {cp} asset {mirror}", key_label(key)));
                    break 'outer;
                }
            }
        }
        if double_entry.passed {
            let net_worth: Amount = self.agents.values().map(|s| s.equity(&self.marks)).sum();
            let external: Amount = self
                .agents
                .values()
                .flat_map(|s| s.assets.iter())
                .filter(|(k, _)| k.instrument.is_treasury())
                .map(|(k, a)| self.marks.value(k, *a))
                .sum();
            if net_worth != external {
                double_entry.detail = format!("Σ equity {net_worth} != Σ treasury value {external}");
                double_entry.passed = false;
            }
        }
        checks.push(double_entry);

        let mut reserves = AuditCheck::pass(Invariant::ReserveConservation);
        for (id, sheet) in &self.agents {
            let held = sheet.asset_sum(|i| *i == Instrument::Reserves);
            if !held.is_zero() && !self.holds_reserves(*id) {
                reserves.fail(*id, format!("non-bank holds reserves {held}"));
                break;
            }
        }
        if reserves.passed {
            let banks = self.total_bank_reserves();
            let fed = self.fed_reserve_liabilities();
            if banks != fed {
                reserves.fail(AgentId::FED, format!("Σ bank reserves {banks} != Fed reserve liabilities {fed}"));
            }
        }
        checks.push(reserves);

        let mut deposits = AuditCheck::pass(Invariant::DepositMatching);
        'dep: for (id, sheet) in &self.agents {
            for (key, amt) in sheet.assets.iter().filter(|(k, _)| k.instrument == Instrument::Deposit) {
                let bank = key.counterparty.filter(|b| b.kind == AgentKind::Bank);
                let Some(bank) = bank else {
                    deposits.fail(*id, "deposit not held at a bank".into());
                    break 'dep;
                };
                let owed = self.agents.get(&bank).map(|s| s.liability(&PositionKey::claim(Instrument::Deposit, *id)));
                if owed != Some(*amt) {
                    deposits.fail(*id, format!("deposit {amt} at {bank} has no matching liability"));
                    break 'dep;
                }
                if self.bank_of.get(id) != Some(&bank) {
                    deposits.fail(*id, format!("deposit at {bank} but registered elsewhere"));
                    break 'dep;
                }
            }
        }
        checks.push(deposits);

        let mut nonneg = AuditCheck::pass(Invariant::NonNegative);
        'nn: for (id, sheet) in &self.agents {
            for (key, amt) in sheet.assets.iter().chain(sheet.liabilities.iter()) {
                if amt.is_negative() {
                    nonneg.fail(*id, format!("{} is {amt}", key_label(key)));
                    break 'nn;
                }
            }
        }
        checks.push(nonneg);

        AuditReport { day: self.clock.day, checks }
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        let agents = self
            .agents
            .iter()
            .map(|(id, sheet)| {
                let pos = |(k, a): (&PositionKey, &Amount)| PositionSnapshot {
                    instrument: k.instrument.label(),
                    counterparty: k.counterparty,
                    amount: *a,
                    value: self.marks.value(k, *a),
                };
                AgentSnapshot {
                    id: *id,
                    bank: self.bank_of.get(id).copied(),
                    assets: sheet.assets.iter().map(pos).collect(),
                    liabilities: sheet.liabilities.iter().map(pos).collect(),
                    total_assets: sheet.total_assets(&self.marks),
                    total_liabilities: sheet.total_liabilities(),
                    equity: sheet.equity(&self.marks),
                }
            })
            .collect();
        WorldSnapshot { day: self.clock.day, seq: self.clock.seq, marks: self.marks, agents }
    }
}

fn key_label(key: &PositionKey) -> String {
    match key.counterparty {
        Some(cp) => format!("{}@{cp}", key.instrument.label()),
        None => key.instrument.label(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Invariant {
    DoubleEntry,
    ReserveConservation,
    DepositMatching,
    NonNegative,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub invariant: Invariant,
    pub passed: bool,
    pub agent: Option<AgentId>,
    pub detail: String,
}

impl AuditCheck {
    fn pass(invariant: Invariant) -> Self {
        AuditCheck { invariant, passed: true, agent: None, detail: String::new() }
    }

    fn fail(&mut self, agent: AgentId, detail: String) {
        self.passed = false;
        self.agent = Some(agent);
        self.detail = detail;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub day: Day,
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, invariant: Invariant) -> &AuditCheck {
        self.checks.iter().find(|c| c.invariant == invariant).expect("every invariant is checked")
    }

    pub fn first_failure(&self) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| !c.passed)
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = if c.passed { "ok" } else { "FAIL" };
            write!(f, "day {} {:?}: {status}", self.day, c.invariant)?;
            if let Some(a) = c.agent {
                write!(f, " ({a}: {})", c.detail)?;
            } else if !c.detail.is_empty() {
                write!(f, " ({})", c.detail)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Immutable copy of the world, serialized with agents sorted by id and
/// positions sorted by instrument key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub day: Day,
    pub seq: u64,
    pub marks: Marks,
    pub agents: Vec<AgentSnapshot>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub id: AgentId,
    pub bank: Option<AgentId>,
    pub assets: Vec<PositionSnapshot>,
    pub liabilities: Vec<PositionSnapshot>,
    pub total_assets: Amount,
    pub total_liabilities: Amount,
    pub equity: Amount,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionSnapshot {
    pub instrument: String,
    pub counterparty: Option<AgentId>,
    /// Face for treasuries, balance for claims.
    pub amount: Amount,
    pub value: Amount,
}

impl WorldSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentSnapshot> {
        self.agents.iter().find(|a| a.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dollars(d: i64) -> Amount {
        Amount::dollars(d)
    }

    /// Fed, two banks, a holder at bank 0 and an issuer at bank 1.
    fn four_agent_world() -> LedgerWorld {
        let mut w = LedgerWorld::new();
        w.add_bank(AgentId::bank(0));
        w.add_bank(AgentId::bank(1));
        w.add_depositor(AgentId::holder(0), AgentId::bank(0));
        w.add_depositor(AgentId::issuer(0), AgentId::bank(1));
        for b in [AgentId::bank(0), AgentId::bank(1)] {
            w.apply(&[
                Op::Endow { agent: AgentId::FED, class: SecurityClass::LongOffTheRun, maturity: 3650, face: dollars(5_000) },
                Op::Issue { creditor: b, debtor: AgentId::FED, instrument: Instrument::Reserves, amount: dollars(5_000) },
            ])
            .unwrap();
        }
        w.apply(&[Op::Issue {
            creditor: AgentId::holder(0),
            debtor: AgentId::bank(0),
            instrument: Instrument::Deposit,
            amount: dollars(2_000),
        }])
        .unwrap();
        w
    }

    #[test]
    fn zero_transfer_is_identity() {
        let mut w = four_agent_world();
        let before = w.clone();
        w.post_transfer(AgentId::holder(0), AgentId::issuer(0), Instrument::Deposit, Amount::ZERO).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn reserve_transfer_conserves_fed_liability() {
        let mut w = four_agent_world();
        let fed = w.fed_reserve_liabilities();
        w.post_transfer(AgentId::bank(0), AgentId::bank(1), Instrument::Reserves, Amount::from_minor(100_00)).unwrap();
        assert_eq!(w.reserves(AgentId::bank(0)), dollars(4_900));
        assert_eq!(w.reserves(AgentId::bank(1)), dollars(5_100));
        assert_eq!(w.fed_reserve_liabilities(), fed);
        assert!(w.audit().passed());
    }

    #[test]
    fn interbank_deposit_payment_moves_reserves() {
        // Holder at bank 0 pays the issuer at bank 1, the step-3 leg of a mint.
        let mut w = four_agent_world();
        let deposits_before = w.total_bank_deposits();
        w.post_transfer(AgentId::holder(0), AgentId::issuer(0), Instrument::Deposit, Amount::from_minor(1_000_00))
            .unwrap();
        assert_eq!(w.reserves(AgentId::bank(0)), dollars(4_000));
        assert_eq!(w.reserves(AgentId::bank(1)), dollars(6_000));
        assert_eq!(w.deposits(AgentId::issuer(0)), dollars(1_000));
        assert_eq!(w.total_bank_deposits(), deposits_before);
        assert!(w.audit().passed());
    }

    #[test]
    fn failed_transfer_is_atomic() {
        let mut w = four_agent_world();
        let before = w.snapshot().to_json();
        let err = w
            .post_transfer(AgentId::holder(0), AgentId::issuer(0), Instrument::Deposit, dollars(2_001))
            .unwrap_err();
        assert!(matches!(err, LedgerError::InsufficientPosition { .. }));
        assert_eq!(w.snapshot().to_json(), before);
    }

    #[test]
    fn unknown_agent() {
        let mut w = four_agent_world();
        let err = w.post_transfer(AgentId::holder(9), AgentId::issuer(0), Instrument::Deposit, dollars(1)).unwrap_err();
        assert_eq!(err, LedgerError::UnknownAgent(AgentId::holder(9)));
    }

    #[test]
    fn fresh_world_passes_audit() {
        assert!(LedgerWorld::new().audit().passed());
        assert!(four_agent_world().audit().passed());
    }

    #[test]
    fn corrupted_deposit_names_agent() {
        let mut w = four_agent_world();
        w.sheet_mut_unchecked(AgentId::issuer(0)).unwrap().adjust(
            Side::Asset,
            PositionKey::claim(Instrument::Deposit, AgentId::bank(1)),
            dollars(10),
        );
        let report = w.audit();
        let check = report.check(Invariant::DepositMatching);
        assert!(!check.passed);
        assert_eq!(check.agent, Some(AgentId::issuer(0)));
    }

    #[test]
    fn snapshot_is_frozen_and_stable() {
        let mut w = four_agent_world();
        let snap = w.snapshot();
        let again = w.snapshot();
        assert_eq!(snap.to_json(), again.to_json());
        w.post_transfer(AgentId::holder(0), AgentId::issuer(0), Instrument::Deposit, dollars(500)).unwrap();
        assert_eq!(snap.agent(AgentId::holder(0)).unwrap().equity, dollars(2_000));
        assert_ne!(snap.to_json(), w.snapshot().to_json());
    }

    #[test]
    fn agent_id_round_trips_through_text() {
        for id in [AgentId::FED, AgentId::dealer(3), AgentId::buyer(12)] {
            assert_eq!(id.to_string().parse::<AgentId>().unwrap(), id);
        }
        assert!("nobody-1".parse::<AgentId>().is_err());
    }

    #[test]
    fn coins_cannot_be_posted_to_issuer_by_transfer() {
        let mut w = four_agent_world();
        let coin = Instrument::Stablecoin { issuer: AgentId::issuer(0) };
        w.apply(&[Op::Issue { creditor: AgentId::holder(0), debtor: AgentId::issuer(0), instrument: coin, amount: dollars(5) }])
            .unwrap();
        assert_eq!(w.coins_outstanding(AgentId::issuer(0)), dollars(5));
        assert!(w.post_transfer(AgentId::holder(0), AgentId::issuer(0), coin, dollars(1)).is_err());
    }
}
