//! Timestamped event log written as JSON lines.

use serde::{Deserialize, Serialize};

use crate::ledger::{AgentId, Day, LedgerWorld, SecurityClass};
use crate::money::{Amount, Fraction};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    RedemptionRequested { issuer: AgentId, holder: AgentId, request: u64, amount: Amount, funding: String },
    RedemptionRejected { issuer: AgentId, holder: AgentId, amount: Amount, reason: String },
    CoinsEscrowed { issuer: AgentId, request: u64, amount: Amount },
    RedemptionPaid { issuer: AgentId, holder: AgentId, request: u64, amount: Amount, age_days: Day, delayed: bool },
    RedemptionDelayed { issuer: AgentId, request: u64, amount: Amount, age_days: Day },
    LegFailed { issuer: AgentId, request: Option<u64>, leg: String, cause: String },
    CoinsSold { holder: AgentId, intermediary: AgentId, issuer: AgentId, coins: Amount, paid: Amount },
    MintSettled { issuer: AgentId, buyer: AgentId, amount: Amount },
    MintDeclined { issuer: AgentId, buyer: AgentId, amount: Amount, reason: String },
    BillsPurchased { issuer: AgentId, seller: AgentId, face: Amount, cash: Amount },
    Intervention { issuer: AgentId, action: String, coins: Amount, cash: Amount },
    SaleSubmitted { order: u64, seller: AgentId, class: SecurityClass, face: Amount },
    SaleFilled { order: u64, fill: u64, seller: AgentId, dealer: AgentId, class: SecurityClass, face: Amount, cash: Amount, funding: String },
    SaleUnfilled { order: u64, seller: AgentId, class: SecurityClass, face: Amount },
    SaleSettled { fill: u64, seller: AgentId, dealer: AgentId, cash: Amount },
    SettlementFailed { fill: u64, cause: String },
    SrfDraw { dealer: AgentId, amount: Amount },
    RepoRolled { old: u64, new: u64, principal: Amount },
    RepoNotRolled { repo: u64, lender: AgentId, borrower: AgentId },
    FundingGap { repo: u64, borrower: AgentId, lender: AgentId, gap: Amount },
    RepoReplaced { repo: u64, lender: AgentId, amount: Amount },
    RepoRepaid { repo: u64, amount: Amount, remaining: Amount },
    RepoWrittenOff { repo: u64, lender: AgentId, borrower: AgentId, loss: Amount },
    MarginCall { repo: u64, borrower: AgentId, collateral_value: Amount, floor: Amount },
    PriceMarked { class: SecurityClass, price: Fraction },
    ShockStarted { shock: usize, class: String, issuers: Vec<AgentId>, price_effect: Fraction, until: Day },
    ShockEnded { shock: usize, class: String },
    SupplyMinted { issuer: AgentId, recipient: AgentId, amount: Amount },
    SupplyBurned { issuer: AgentId, recipient: AgentId, amount: Amount },
    RegimeFlip { issuer: AgentId, sensitive: bool },
    AuditFailed { detail: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub day: Day,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    /// Stamp with the world clock and append.
    pub fn push(&mut self, world: &mut LedgerWorld, kind: EventKind) {
        let seq = world.next_seq();
        self.events.push(Event { day: world.today(), seq, kind });
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn on_day(&self, day: Day) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.day == day)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}
