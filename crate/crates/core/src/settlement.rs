//! Redemption and minting state machines, access modes and par policy.
//!
//! A redemption runs in four steps: the holder hands coins to the issuer
//! (escrow), the issuer raises cash if its deposits are short, the issuer
//! pays the holder's bank deposit, and the coin liability is retired. Cash
//! on deposit pays the same day. Otherwise the issuer sells Treasuries
//! (settling T+1 through dealers) or stops rolling its reverse repos, and
//! the request waits in a FIFO queue. Whether par holds therefore depends
//! on how quickly that second step executes, not only on solvency.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ConfidenceState, PriceParams, RunModel};
use crate::events::EventKind;
use crate::instruments::{face_for_value, InstrumentError, GENIUS_MAX_BILL_DAYS};
use crate::ledger::{AgentId, AgentKind, Day, Instrument, LedgerError, Op, SecurityClass};
use crate::market::{self, SalePurpose};
use crate::money::{Amount, Fraction};
use crate::system::System;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SettlementError {
    #[error("{holder} may not redeem directly with {issuer}")]
    IneligibleRedeemer { holder: AgentId, issuer: AgentId },
    #[error("amount must be positive, got {0}")]
    NonPositiveAmount(Amount),
    #[error("no issuer desk for {0}")]
    UnknownIssuer(AgentId),
    #[error("{holder} holds {available} coins, needs {needed}")]
    InsufficientCoins { holder: AgentId, needed: Amount, available: Amount },
    #[error("{agent} has {available} cash, needs {needed}")]
    InsufficientCash { agent: AgentId, needed: Amount, available: Amount },
    #[error("request {request}: leg {leg} failed: {cause}")]
    LegFailed { request: u64, leg: String, cause: LegCause },
    #[error("mint declined: {0}")]
    MintDeclined(String),
    #[error("standing repo facility is disabled")]
    SrfDisabled,
    #[error("SLR headroom {headroom} is below the draw {amount}")]
    SlrBound { headroom: Amount, amount: Amount },
    #[error("{dealer} has {available} of unpledged Treasuries, needs {needed}")]
    InsufficientCollateral { dealer: AgentId, needed: Amount, available: Amount },
    #[error("corridor width must be positive")]
    ZeroCorridor,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LegCause {
    DealerCapacity,
    ChainHalted,
    Ledger(String),
}

impl fmt::Display for LegCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LegCause::DealerCapacity => f.write_str("dealer_capacity"),
            LegCause::ChainHalted => f.write_str("chain_halted"),
            LegCause::Ledger(s) => write!(f, "ledger: {s}"),
        }
    }
}

/// Who may mint and redeem with the issuer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessMode {
    /// Every holder redeems at par with the issuer.
    Direct,
    /// Only listed entities redeem; everyone else trades on a secondary market.
    Intermediated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParMode {
    RigorousFixed,
    Corridor { width: Fraction },
    BestEffort,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParPolicy {
    pub mode: ParMode,
}

impl ParPolicy {
    pub const RIGOROUS: ParPolicy = ParPolicy { mode: ParMode::RigorousFixed };
    pub const BEST_EFFORT: ParPolicy = ParPolicy { mode: ParMode::BestEffort };

    pub fn corridor(width: Fraction) -> Result<Self, SettlementError> {
        if width <= Fraction::ZERO {
            return Err(SettlementError::ZeroCorridor);
        }
        Ok(ParPolicy { mode: ParMode::Corridor { width } })
    }
}

/// What an intermediary does with coins bought below par.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntermediaryBehavior {
    RedeemImmediately,
    Warehouse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Direct,
    ViaIntermediary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Funding {
    FromDeposits,
    SellTreasuries,
    RepoNonRollover,
}

impl Funding {
    pub fn label(self) -> &'static str {
        match self {
            Funding::FromDeposits => "from_deposits",
            Funding::SellTreasuries => "sell_treasuries",
            Funding::RepoNonRollover => "repo_non_rollover",
        }
    }

    /// Days within which a redemption on this route counts as on time.
    pub fn horizon(self) -> Day {
        match self {
            Funding::FromDeposits => 0,
            Funding::SellTreasuries | Funding::RepoNonRollover => 1,
        }
    }
}

/// A holder's request to redeem coins at par.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedemptionRequest {
    pub holder: AgentId,
    pub amount: Amount,
    pub submitted: Day,
    pub route: Route,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "leg", rename_all = "snake_case")]
pub enum Leg {
    /// Holder's coins become a redemption payable.
    Escrow,
    SellTreasuries { class: SecurityClass, face: Amount },
    DeclineRoll { repo: u64 },
    /// Issuer deposit to the holder; the payable is retired.
    PayRedeemer,
}

impl Leg {
    pub fn label(&self) -> &'static str {
        match self {
            Leg::Escrow => "escrow",
            Leg::SellTreasuries { .. } => "sell_treasuries",
            Leg::DeclineRoll { .. } => "decline_roll",
            Leg::PayRedeemer => "pay_redeemer",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedLeg {
    pub offset: Day,
    pub leg: Leg,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementPlan {
    pub issuer: AgentId,
    pub request: RedemptionRequest,
    pub funding: Funding,
    pub legs: Vec<PlannedLeg>,
}

impl SettlementPlan {
    /// Day offset of the final leg.
    pub fn horizon(&self) -> Day {
        self.legs.last().map(|l| l.offset).unwrap_or(0)
    }
}

/// A redemption waiting for payment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuedRedemption {
    pub id: u64,
    pub issuer: AgentId,
    pub holder: AgentId,
    pub amount: Amount,
    pub submitted: Day,
    pub route: Route,
    pub funding: Funding,
    pub horizon: Day,
    pub escrowed: bool,
    pub delayed: bool,
}

impl QueuedRedemption {
    pub fn age(&self, today: Day) -> Day {
        today.saturating_sub(self.submitted)
    }

    /// Days past the plan horizon, zero if on time.
    pub fn delay_days(&self, today: Day) -> Day {
        self.age(today).saturating_sub(self.horizon)
    }
}

/// Per-issuer totals for the current day.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeskDay {
    pub requested: Amount,
    pub filled: Amount,
    /// Redemptions that went past their horizon today.
    pub delayed: Amount,
    pub rejected: Amount,
    pub bought: Amount,
    pub minted: Amount,
}

/// An issuer's operating state: policies, queue and confidence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IssuerDesk {
    pub id: AgentId,
    pub policy: ParPolicy,
    pub access: AccessMode,
    /// Entities allowed to redeem directly under intermediated access.
    pub eligible: BTreeSet<AgentId>,
    pub chains: Vec<String>,
    pub genius_compliant: bool,
    pub run: RunModel,
    pub conf: ConfidenceState,
    pub price: PriceParams,
    /// Daily Treasury return used for the negative-carry test.
    pub r_t: Fraction,
    /// Mints are declined when `r_t` is at or below this.
    pub mint_floor: Fraction,
    /// Daily rate on reverse repos the issuer rolls.
    pub repo_rate: Fraction,
    pub blocked_until: Option<Day>,
    /// One-off price effect to apply at the next price update.
    pub shock_effect: Fraction,
    pub shock_active_until: Option<Day>,
    pub queue: VecDeque<QueuedRedemption>,
    /// Reverse repos the issuer will not roll at their next second leg.
    pub non_roll: BTreeSet<u64>,
    pub minted: Amount,
    pub retired: Amount,
    pub delayed_total: Amount,
    pub max_delay_days: Day,
    pub today: DeskDay,
    next_request: u64,
}

impl IssuerDesk {
    pub fn new(id: AgentId, run: RunModel) -> Self {
        IssuerDesk {
            id,
            policy: ParPolicy::RIGOROUS,
            access: AccessMode::Direct,
            eligible: BTreeSet::new(),
            chains: Vec::new(),
            genius_compliant: true,
            run,
            conf: ConfidenceState::default(),
            price: PriceParams::default(),
            r_t: Fraction::from_ppm(100),
            mint_floor: Fraction::ZERO,
            repo_rate: Fraction::from_ppm(100),
            blocked_until: None,
            shock_effect: Fraction::ZERO,
            shock_active_until: None,
            queue: VecDeque::new(),
            non_roll: BTreeSet::new(),
            minted: Amount::ZERO,
            retired: Amount::ZERO,
            delayed_total: Amount::ZERO,
            max_delay_days: 0,
            today: DeskDay::default(),
            next_request: 0,
        }
    }

    /// Whether on-chain legs (escrow, mint, coin transfers) are halted.
    pub fn is_blocked(&self, day: Day) -> bool {
        self.blocked_until.is_some_and(|u| day <= u)
    }

    pub fn shock_active(&self, day: Day) -> bool {
        self.shock_active_until.is_some_and(|u| day <= u)
    }

    pub fn unpaid(&self) -> Amount {
        self.queue.iter().map(|r| r.amount).sum()
    }

    /// Unpaid redemptions already past their horizon.
    pub fn failing(&self, today: Day) -> Amount {
        self.queue.iter().filter(|r| r.delay_days(today) > 0).map(|r| r.amount).sum()
    }

    pub fn may_redeem_directly(&self, holder: AgentId) -> bool {
        self.access == AccessMode::Direct || self.eligible.contains(&holder)
    }
}

fn desk(sys: &System, issuer: AgentId) -> Result<&IssuerDesk, SettlementError> {
    sys.desks.get(&issuer).ok_or(SettlementError::UnknownIssuer(issuer))
}

fn desk_mut(sys: &mut System, issuer: AgentId) -> &mut IssuerDesk {
    sys.desks.get_mut(&issuer).expect("desk checked by caller")
}

/// Cash the issuer will receive from sales and repos already set in motion.
pub fn incoming(sys: &System, issuer: AgentId) -> Amount {
    let m = &sys.market;
    let funding = |p: &SalePurpose| matches!(p, SalePurpose::IssuerFunding);
    let open: Amount = m
        .orders()
        .iter()
        .filter(|o| o.seller == issuer && funding(&o.purpose))
        .map(|o| o.face.scale(sys.world.marks.get(o.class)))
        .sum();
    let flight: Amount = m.in_flight().filter(|f| f.seller == issuer && funding(&f.purpose)).map(|f| f.cash).sum();
    let repos: Amount = sys
        .desks
        .get(&issuer)
        .map(|d| {
            d.non_roll
                .iter()
                .filter_map(|id| sys.repos.get(*id))
                .map(|p| match m.unwinding.get(&p.id) {
                    Some(owed) => *owed - m.unwind_repay_pending(p.id),
                    None => p.principal + p.interest(),
                })
                .sum()
        })
        .unwrap_or(Amount::ZERO);
    open + flight + repos
}

/// Cash on hand not already promised to queued redeemers.
pub fn free_cash(sys: &System, issuer: AgentId) -> Amount {
    let unpaid = sys.desks.get(&issuer).map(|d| d.unpaid()).unwrap_or(Amount::ZERO);
    sys.world.cash(issuer) - unpaid
}

/// Face of a class the issuer could still put up for sale.
fn saleable_face(sys: &System, issuer: AgentId, class: SecurityClass) -> Amount {
    let free = sys.repos.free_face(&sys.world, issuer, class);
    let on_order = sys.market.open_face(issuer, class);
    let in_flight: Amount = sys.market.in_flight().filter(|f| f.seller == issuer && f.class == class).map(|f| f.face()).sum();
    (free - on_order - in_flight).max(Amount::ZERO)
}

/// Legs that raise `need` in cash: bills first, then repos not rolled, then
/// long-duration securities.
fn funding_legs(sys: &System, issuer: AgentId, need: Amount) -> (Funding, Vec<Leg>) {
    let marks = sys.world.marks;
    let bills = saleable_face(sys, issuer, SecurityClass::Bill);
    if bills.scale(marks.bill) >= need {
        let face = face_for_value(need, marks.bill).min(bills);
        return (Funding::SellTreasuries, vec![Leg::SellTreasuries { class: SecurityClass::Bill, face }]);
    }
    let non_roll = sys.desks.get(&issuer).map(|d| d.non_roll.clone()).unwrap_or_default();
    let repos: Vec<(u64, Amount)> = sys
        .repos
        .lent_by(issuer)
        .into_iter()
        .filter(|p| !non_roll.contains(&p.id))
        .map(|p| (p.id, p.principal + p.interest()))
        .collect();
    let repo_total: Amount = repos.iter().map(|(_, a)| *a).sum();
    if repo_total >= need {
        let mut legs = Vec::new();
        let mut got = Amount::ZERO;
        for (id, amt) in repos {
            if got >= need {
                break;
            }
            legs.push(Leg::DeclineRoll { repo: id });
            got += amt;
        }
        return (Funding::RepoNonRollover, legs);
    }
    let mut legs = Vec::new();
    let mut got = Amount::ZERO;
    if bills.is_positive() {
        legs.push(Leg::SellTreasuries { class: SecurityClass::Bill, face: bills });
        got += bills.scale(marks.bill);
    }
    let longs = saleable_face(sys, issuer, SecurityClass::LongOffTheRun);
    if longs.is_positive() {
        let face = face_for_value(need - got, marks.long).min(longs);
        legs.push(Leg::SellTreasuries { class: SecurityClass::LongOffTheRun, face });
        got += face.scale(marks.long);
    }
    if got < need {
        legs.extend(repos.into_iter().map(|(id, _)| Leg::DeclineRoll { repo: id }));
    }
    let funding = match legs.first() {
        Some(Leg::DeclineRoll { .. }) => Funding::RepoNonRollover,
        _ => Funding::SellTreasuries,
    };
    (funding, legs)
}

/// Choose how the issuer funds a redemption and lay out its legs.
pub fn plan_redemption(sys: &System, issuer: AgentId, req: RedemptionRequest) -> Result<SettlementPlan, SettlementError> {
    if !req.amount.is_positive() {
        return Err(SettlementError::NonPositiveAmount(req.amount));
    }
    let d = desk(sys, issuer)?;
    let eligible = match req.route {
        Route::Direct => d.may_redeem_directly(req.holder),
        Route::ViaIntermediary => req.holder.kind == AgentKind::Intermediary && d.may_redeem_directly(req.holder),
    };
    if !eligible {
        return Err(SettlementError::IneligibleRedeemer { holder: req.holder, issuer });
    }
    let held = sys.world.coins_held(req.holder, issuer);
    if held < req.amount {
        return Err(SettlementError::InsufficientCoins { holder: req.holder, needed: req.amount, available: held });
    }
    let free = free_cash(sys, issuer);
    let mut legs = vec![PlannedLeg { offset: 0, leg: Leg::Escrow }];
    let funding = if free >= req.amount {
        Funding::FromDeposits
    } else {
        let need = req.amount - (free + incoming(sys, issuer)).max(Amount::ZERO);
        if need.is_positive() {
            let (funding, extra) = funding_legs(sys, issuer, need);
            legs.extend(extra.into_iter().map(|leg| PlannedLeg { offset: 0, leg }));
            funding
        } else {
            Funding::SellTreasuries
        }
    };
    legs.push(PlannedLeg { offset: funding.horizon(), leg: Leg::PayRedeemer });
    Ok(SettlementPlan { issuer, request: req, funding, legs })
}

fn escrow_ops(issuer: AgentId, holder: AgentId, amount: Amount) -> [Op; 2] {
    [
        Op::Extinguish { creditor: holder, debtor: issuer, instrument: Instrument::Stablecoin { issuer }, amount },
        Op::Issue { creditor: holder, debtor: issuer, instrument: Instrument::RedemptionPayable, amount },
    ]
}

/// Put a plan in motion: escrow the coins, launch its funding legs, queue
/// the request and pay whatever the issuer can pay now.
///
/// A failed funding leg leaves the request in the queue and returns
/// `LegFailed`; it is paid once cash arrives.
pub fn execute_plan(sys: &mut System, plan: &SettlementPlan) -> Result<u64, SettlementError> {
    let issuer = plan.issuer;
    let req = plan.request;
    let today = sys.world.today();
    let blocked = desk(sys, issuer)?.is_blocked(today);
    let held = sys.world.coins_held(req.holder, issuer);
    if held < req.amount {
        return Err(SettlementError::InsufficientCoins { holder: req.holder, needed: req.amount, available: held });
    }
    let escrowed = !blocked && sys.world.apply(&escrow_ops(issuer, req.holder, req.amount)).is_ok();
    let d = desk_mut(sys, issuer);
    d.next_request += 1;
    let id = d.next_request;
    d.queue.push_back(QueuedRedemption {
        id,
        issuer,
        holder: req.holder,
        amount: req.amount,
        submitted: req.submitted.min(today),
        route: req.route,
        funding: plan.funding,
        horizon: plan.funding.horizon(),
        escrowed,
        delayed: false,
    });
    d.today.requested += req.amount;
    sys.events.push(
        &mut sys.world,
        EventKind::RedemptionRequested {
            issuer,
            holder: req.holder,
            request: id,
            amount: req.amount,
            funding: plan.funding.label().into(),
        },
    );
    if escrowed {
        sys.events.push(&mut sys.world, EventKind::CoinsEscrowed { issuer, request: id, amount: req.amount });
    }
    let orders = launch_legs(sys, issuer, plan.legs.iter().map(|l| l.leg));
    pay_queue(sys, issuer);
    if blocked {
        return Err(leg_failed(sys, issuer, id, "escrow", LegCause::ChainHalted));
    }
    let unfilled = orders.iter().any(|o| sys.market.orders().iter().any(|q| q.id == *o));
    if unfilled {
        return Err(leg_failed(sys, issuer, id, "sell_treasuries", LegCause::DealerCapacity));
    }
    Ok(id)
}

fn leg_failed(sys: &mut System, issuer: AgentId, request: u64, leg: &str, cause: LegCause) -> SettlementError {
    sys.events.push(
        &mut sys.world,
        EventKind::LegFailed { issuer, request: Some(request), leg: leg.into(), cause: cause.to_string() },
    );
    SettlementError::LegFailed { request, leg: leg.into(), cause }
}

/// Submit sale orders and flag repos; returns the order ids and clears the
/// market if anything was sold.
fn launch_legs(sys: &mut System, issuer: AgentId, legs: impl Iterator<Item = Leg>) -> Vec<u64> {
    let mut orders = Vec::new();
    for leg in legs {
        match leg {
            Leg::SellTreasuries { class, face } if face.is_positive() => {
                orders.push(market::submit_order(sys, issuer, class, face, SalePurpose::IssuerFunding));
            }
            Leg::DeclineRoll { repo } => {
                desk_mut(sys, issuer).non_roll.insert(repo);
            }
            _ => {}
        }
    }
    if !orders.is_empty() {
        market::clear_market(sys);
    }
    orders
}

/// Raise cash for queued redemptions that existing sales and repos will
/// not cover.
pub fn fund_shortfall(sys: &mut System, issuer: AgentId) -> Amount {
    let Ok(d) = desk(sys, issuer) else { return Amount::ZERO };
    let unpaid = d.unpaid();
    let need = unpaid - sys.world.cash(issuer) - incoming(sys, issuer);
    if !need.is_positive() {
        return Amount::ZERO;
    }
    let (_, legs) = funding_legs(sys, issuer, need);
    launch_legs(sys, issuer, legs.into_iter());
    need
}

/// Pay queued redemptions in order while cash lasts. Returns the amount paid.
pub fn pay_queue(sys: &mut System, issuer: AgentId) -> Amount {
    let today = sys.world.today();
    let mut paid = Amount::ZERO;
    while let Some(d) = sys.desks.get(&issuer) {
        let Some(head) = d.queue.front().cloned() else { break };
        let blocked = d.is_blocked(today);
        if !head.escrowed {
            if blocked {
                break;
            }
            if sys.world.apply(&escrow_ops(issuer, head.holder, head.amount)).is_err() {
                let d = desk_mut(sys, issuer);
                d.queue.pop_front();
                d.today.rejected += head.amount;
                sys.events.push(
                    &mut sys.world,
                    EventKind::RedemptionRejected {
                        issuer,
                        holder: head.holder,
                        amount: head.amount,
                        reason: "coins no longer held".into(),
                    },
                );
                continue;
            }
            desk_mut(sys, issuer).queue.front_mut().expect("head").escrowed = true;
            sys.events.push(&mut sys.world, EventKind::CoinsEscrowed { issuer, request: head.id, amount: head.amount });
        }
        if sys.world.cash(issuer) < head.amount {
            break;
        }
        let ops = [
            Op::Pay { from: issuer, to: head.holder, amount: head.amount },
            Op::Extinguish { creditor: head.holder, debtor: issuer, instrument: Instrument::RedemptionPayable, amount: head.amount },
        ];
        if let Err(e) = sys.world.apply(&ops) {
            sys.events.push(
                &mut sys.world,
                EventKind::LegFailed {
                    issuer,
                    request: Some(head.id),
                    leg: "pay_redeemer".into(),
                    cause: LegCause::Ledger(e.to_string()).to_string(),
                },
            );
            break;
        }
        let delay = head.delay_days(today);
        let d = desk_mut(sys, issuer);
        d.queue.pop_front();
        d.retired += head.amount;
        d.today.filled += head.amount;
        d.max_delay_days = d.max_delay_days.max(delay);
        paid += head.amount;
        sys.events.push(
            &mut sys.world,
            EventKind::RedemptionPaid {
                issuer,
                holder: head.holder,
                request: head.id,
                amount: head.amount,
                age_days: head.age(today),
                delayed: delay > 0,
            },
        );
    }
    paid
}

/// Flag requests that passed their horizon today and refresh the delay age
/// seen by holders.
pub fn mark_delays(sys: &mut System, issuer: AgentId) {
    let today = sys.world.today();
    let Some(d) = sys.desks.get_mut(&issuer) else { return };
    let mut newly = Vec::new();
    let mut oldest = 0;
    for r in d.queue.iter_mut() {
        let late = r.delay_days(today);
        oldest = oldest.max(late);
        if late > 0 && !r.delayed {
            r.delayed = true;
            newly.push((r.id, r.amount, r.age(today)));
        }
    }
    d.conf.pending_delay_age = oldest;
    d.max_delay_days = d.max_delay_days.max(oldest);
    for (_, amount, _) in &newly {
        d.delayed_total += *amount;
        d.today.delayed += *amount;
    }
    for (request, amount, age_days) in newly {
        sys.events.push(&mut sys.world, EventKind::RedemptionDelayed { issuer, request, amount, age_days });
    }
}

/// A holder outside the eligible set sells coins to an intermediary at the
/// secondary price. Returns the cash paid.
pub fn sell_to_intermediary(
    sys: &mut System,
    holder: AgentId,
    intermediary: AgentId,
    issuer: AgentId,
    coins: Amount,
) -> Result<Amount, SettlementError> {
    let d = desk(sys, issuer)?;
    if d.is_blocked(sys.world.today()) {
        return Err(SettlementError::LegFailed { request: 0, leg: "coin_transfer".into(), cause: LegCause::ChainHalted });
    }
    let paid = coins.scale(d.conf.secondary_price);
    let cash = sys.world.cash(intermediary);
    if cash < paid {
        return Err(SettlementError::InsufficientCash { agent: intermediary, needed: paid, available: cash });
    }
    sys.world.apply(&[
        Op::Transfer { from: holder, to: intermediary, instrument: Instrument::Stablecoin { issuer }, amount: coins },
        Op::Pay { from: intermediary, to: holder, amount: paid },
    ])?;
    sys.events.push(&mut sys.world, EventKind::CoinsSold { holder, intermediary, issuer, coins, paid });
    Ok(paid)
}

/// Issuer's Treasury purchase paired with a mint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BillPurchase {
    pub seller: AgentId,
    pub lots: Vec<(Day, Amount)>,
    pub cash: Amount,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MintPlan {
    pub issuer: AgentId,
    pub buyer: AgentId,
    pub amount: Amount,
    pub bills: Option<BillPurchase>,
}

/// Plan a mint, optionally investing the proceeds in bills bought from
/// `bills_from`.
pub fn plan_mint(
    sys: &System,
    issuer: AgentId,
    buyer: AgentId,
    amount: Amount,
    bills_from: Option<AgentId>,
) -> Result<MintPlan, SettlementError> {
    if !amount.is_positive() {
        return Err(SettlementError::NonPositiveAmount(amount));
    }
    let d = desk(sys, issuer)?;
    let today = sys.world.today();
    if d.is_blocked(today) {
        return Err(SettlementError::MintDeclined("chain halted".into()));
    }
    if d.r_t <= d.mint_floor {
        return Err(SettlementError::MintDeclined(format!("negative carry: r_T {} at or below {}", d.r_t, d.mint_floor)));
    }
    if d.policy.mode == ParMode::BestEffort && d.conf.secondary_price < Fraction::ONE {
        return Err(SettlementError::MintDeclined(format!("secondary price {} below par", d.conf.secondary_price)));
    }
    let cash = sys.world.cash(buyer);
    if cash < amount {
        return Err(SettlementError::InsufficientCash { agent: buyer, needed: amount, available: cash });
    }
    let bills = match bills_from {
        None => None,
        Some(seller) => {
            let price = sys.world.marks.bill;
            let lots: Vec<(Day, Amount)> = sys
                .repos
                .free_lots(&sys.world, seller, SecurityClass::Bill)
                .into_iter()
                .filter(|(m, _)| !d.genius_compliant || m.saturating_sub(today) <= GENIUS_MAX_BILL_DAYS)
                .collect();
            if lots.is_empty() {
                let maturity = sys.world.sheet(seller)?.treasury_lots(SecurityClass::Bill).first().map(|l| l.0).unwrap_or(today);
                return Err(InstrumentError::GeniusIneligible { maturity, days: maturity.saturating_sub(today) }.into());
            }
            let mut face = Amount::from_minor(
                (amount.minor() as i128 * crate::money::PPM as i128 / price.ppm() as i128) as i64,
            );
            let mut take = Vec::new();
            for (m, f) in lots {
                let t = f.min(face);
                if t.is_positive() {
                    take.push((m, t));
                    face -= t;
                }
            }
            let cash: Amount = take.iter().map(|(_, f)| *f).sum::<Amount>().scale(price);
            Some(BillPurchase { seller, lots: take, cash })
        }
    };
    Ok(MintPlan { issuer, buyer, amount, bills })
}

/// Settle a mint atomically: buyer cash to the issuer, coins to the buyer,
/// and the optional bill purchase.
pub fn execute_mint(sys: &mut System, plan: &MintPlan) -> Result<(), SettlementError> {
    let MintPlan { issuer, buyer, amount, .. } = *plan;
    let mut ops = vec![
        Op::Pay { from: buyer, to: issuer, amount },
        Op::Issue { creditor: buyer, debtor: issuer, instrument: Instrument::Stablecoin { issuer }, amount },
    ];
    if let Some(b) = &plan.bills {
        ops.push(Op::Pay { from: issuer, to: b.seller, amount: b.cash });
        for (maturity, face) in &b.lots {
            ops.push(Op::Transfer {
                from: b.seller,
                to: issuer,
                instrument: Instrument::Treasury { class: SecurityClass::Bill, maturity: *maturity },
                amount: *face,
            });
        }
    }
    sys.world.apply(&ops)?;
    let d = desk_mut(sys, issuer);
    d.minted += amount;
    d.today.minted += amount;
    sys.events.push(&mut sys.world, EventKind::MintSettled { issuer, buyer, amount });
    if let Some(b) = &plan.bills {
        let face = b.lots.iter().map(|(_, f)| *f).sum();
        sys.events.push(&mut sys.world, EventKind::BillsPurchased { issuer, seller: b.seller, face, cash: b.cash });
    }
    Ok(())
}

/// Plan and execute a mint, logging a decline.
pub fn mint(
    sys: &mut System,
    issuer: AgentId,
    buyer: AgentId,
    amount: Amount,
    bills_from: Option<AgentId>,
) -> Result<(), SettlementError> {
    match plan_mint(sys, issuer, buyer, amount, bills_from) {
        Ok(plan) => execute_mint(sys, &plan),
        Err(e) => {
            if let SettlementError::MintDeclined(reason) = &e {
                let reason = reason.clone();
                sys.events.push(&mut sys.world, EventKind::MintDeclined { issuer, buyer, amount, reason });
            }
            Err(e)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum InterventionAction {
    /// Buy coins on the secondary market and retire them.
    BuyCoins { amount: Amount },
    /// Mint and sell coins without an initiating request.
    MintCoins { amount: Amount },
}

/// Open-market actions a policy calls for at `price`. Each action is sized
/// so that `impact` per unit of coins outstanding restores par.
pub fn intervene(policy: &ParPolicy, price: Fraction, coins: Amount, impact: Fraction) -> Vec<InterventionAction> {
    let gap = Fraction::ONE - price;
    let act = match policy.mode {
        ParMode::RigorousFixed => !gap.is_zero(),
        ParMode::Corridor { width } => gap.abs() > width,
        ParMode::BestEffort => false,
    };
    if !act || impact <= Fraction::ZERO || !coins.is_positive() {
        return Vec::new();
    }
    let size = coins.mul_div(gap.abs().ppm(), impact.ppm()).min(coins);
    if !size.is_positive() {
        return Vec::new();
    }
    if gap > Fraction::ZERO {
        vec![InterventionAction::BuyCoins { amount: size }]
    } else {
        vec![InterventionAction::MintCoins { amount: size }]
    }
}

/// Carry out intervention actions. Buys come from intermediaries first,
/// then holders, paid at the secondary price out of free cash. Returns the
/// coins bought.
pub fn execute_intervention(sys: &mut System, issuer: AgentId, actions: &[InterventionAction]) -> Amount {
    let today = sys.world.today();
    let Ok(d) = desk(sys, issuer) else { return Amount::ZERO };
    if d.is_blocked(today) {
        return Amount::ZERO;
    }
    let price = d.conf.secondary_price;
    let mut bought = Amount::ZERO;
    for action in actions {
        match *action {
            InterventionAction::BuyCoins { amount } => {
                let budget = free_cash(sys, issuer).max(Amount::ZERO);
                let affordable = if price.is_zero() {
                    amount
                } else {
                    Amount::from_minor((budget.minor() as i128 * crate::money::PPM as i128 / price.ppm() as i128) as i64)
                };
                let mut left = amount.min(affordable);
                let mut sellers = sys.world.agents_of(AgentKind::Intermediary);
                sellers.extend(sys.world.agents_of(AgentKind::Holder));
                for seller in sellers {
                    if !left.is_positive() {
                        break;
                    }
                    let take = sys.world.coins_held(seller, issuer).min(left);
                    if !take.is_positive() {
                        continue;
                    }
                    let cash = take.scale(price);
                    let ops = [
                        Op::Pay { from: issuer, to: seller, amount: cash },
                        Op::Extinguish { creditor: seller, debtor: issuer, instrument: Instrument::Stablecoin { issuer }, amount: take },
                    ];
                    if sys.world.apply(&ops).is_ok() {
                        left -= take;
                        bought += take;
                        let d = desk_mut(sys, issuer);
                        d.retired += take;
                        d.today.bought += take;
                        sys.events.push(
                            &mut sys.world,
                            EventKind::Intervention { issuer, action: "buy".into(), coins: take, cash },
                        );
                    }
                }
            }
            InterventionAction::MintCoins { amount } => {
                let mut left = amount;
                for buyer in sys.world.agents_of(AgentKind::Intermediary) {
                    let take = sys.world.cash(buyer).min(left);
                    if take.is_positive() && execute_mint(sys, &MintPlan { issuer, buyer, amount: take, bills: None }).is_ok() {
                        left -= take;
                        sys.events.push(
                            &mut sys.world,
                            EventKind::Intervention { issuer, action: "mint".into(), coins: take, cash: take },
                        );
                    }
                }
            }
        }
    }
    bought
}

/// Draw reserves from the standing repo facility against Treasuries. The
/// loan grows the dealer's balance sheet, so it needs SLR headroom like any
/// other asset. Returns the dealer's headroom after the draw.
pub fn srf_leg(sys: &mut System, dealer: AgentId, amount: Amount) -> Result<Amount, SettlementError> {
    if !sys.market.params.srf {
        return Err(SettlementError::SrfDisabled);
    }
    if !amount.is_positive() {
        return Err(SettlementError::NonPositiveAmount(amount));
    }
    let headroom = market::dealer_headroom(sys, dealer);
    if headroom < amount {
        return Err(SettlementError::SlrBound { headroom, amount });
    }
    let collateral = sys.repos.free_value(&sys.world, dealer);
    if collateral < amount {
        return Err(SettlementError::InsufficientCollateral { dealer, needed: amount, available: collateral });
    }
    let ops = market::srf_ops(sys, dealer, amount);
    sys.world.apply(&ops)?;
    sys.market.srf_total += amount;
    sys.market.today.srf_draws += amount;
    sys.events.push(&mut sys.world, EventKind::SrfDraw { dealer, amount });
    Ok(market::dealer_headroom(sys, dealer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::LedgerWorld;
    use crate::market::{DealerState, MarketParams};

    const ISSUER: AgentId = AgentId::issuer(0);
    const HOLDER: AgentId = AgentId::holder(0);
    const BANK: AgentId = AgentId::bank(0);
    const DEALER: AgentId = AgentId::dealer(0);
    const LENDER: AgentId = AgentId::buyer(0);

    fn run() -> RunModel {
        RunModel::new(Fraction::from_bp(10), Fraction::from_bp(1_000), Fraction::from_bp(300)).unwrap()
    }

    /// Issuer with `deposits` cash and `bills` face, a holder with 10_000_00
    /// coins, one dealer with the given capital over 100_00 of assets, and
    /// a well-funded cash lender.
    fn system(deposits: i64, bills: i64, dealer_capital: i64) -> System {
        let mut w = LedgerWorld::new();
        w.add_bank(BANK);
        for a in [ISSUER, HOLDER, DEALER, LENDER] {
            w.add_depositor(a, BANK);
        }
        let mut sys = System::new(w, MarketParams::default(), 1);
        sys.desks.insert(ISSUER, IssuerDesk::new(ISSUER, run()));
        sys.endow_deposit(ISSUER, Amount::from_minor(deposits)).unwrap();
        sys.endow_treasury(ISSUER, SecurityClass::Bill, 30, Amount::from_minor(bills)).unwrap();
        sys.endow_coins(HOLDER, ISSUER, Amount::from_minor(10_000_00)).unwrap();
        sys.endow_deposit(DEALER, Amount::from_minor(dealer_capital)).unwrap();
        sys.endow_treasury(DEALER, SecurityClass::LongOffTheRun, 400, Amount::from_minor(100_00 - dealer_capital)).unwrap();
        let funding = Amount::from_minor(100_00 - dealer_capital);
        sys.world
            .apply(&[Op::Issue { creditor: LENDER, debtor: DEALER, instrument: Instrument::Repo, amount: funding }])
            .unwrap();
        sys.endow_deposit(LENDER, Amount::from_minor(1_000_000_00)).unwrap();
        sys.market.lenders.push(LENDER);
        sys.market.dealers.insert(
            DEALER,
            DealerState {
                exposures: Amount::ZERO,
                slr_bound: Fraction::from_bp(500),
                reserve_access: Amount::from_minor(1_000_000_00),
            },
        );
        sys
    }

    fn request(amount: i64) -> RedemptionRequest {
        RedemptionRequest { holder: HOLDER, amount: Amount::from_minor(amount), submitted: 0, route: Route::Direct }
    }

    #[test]
    fn liquid_issuer_pays_same_day() {
        let mut sys = system(10_000_00, 0, 5_80);
        let before = sys.world.total_bank_deposits();
        let plan = plan_redemption(&sys, ISSUER, request(1_000_00)).unwrap();
        assert_eq!(plan.funding, Funding::FromDeposits);
        assert_eq!(plan.horizon(), 0);
        execute_plan(&mut sys, &plan).unwrap();
        assert!(sys.desks[&ISSUER].queue.is_empty());
        assert_eq!(sys.world.deposits(HOLDER), Amount::from_minor(1_000_00));
        assert_eq!(sys.world.coins_outstanding(ISSUER), Amount::from_minor(9_000_00));
        assert_eq!(sys.world.total_bank_deposits(), before);
        assert!(sys.world.audit().passed());
    }

    #[test]
    fn bills_fund_next_day() {
        let mut sys = system(0, 10_000_00, 100_00);
        let plan = plan_redemption(&sys, ISSUER, request(1_000_00)).unwrap();
        assert_eq!(plan.funding, Funding::SellTreasuries);
        assert_eq!(plan.horizon(), 1);
        execute_plan(&mut sys, &plan).unwrap();
        assert_eq!(sys.desks[&ISSUER].queue.len(), 1);
        sys.world.advance_day();
        sys.market.begin_day();
        market::settle_due(&mut sys);
        pay_queue(&mut sys, ISSUER);
        assert!(sys.desks[&ISSUER].queue.is_empty());
        assert_eq!(sys.world.deposits(HOLDER), Amount::from_minor(1_000_00));
        assert!(sys.world.audit().passed());
    }

    #[test]
    fn no_headroom_fails_the_sale_leg() {
        // capital 5_00 on 100_00 of assets sits exactly at a 5% bound
        let mut sys = system(0, 10_000_00, 5_00);
        assert_eq!(market::capacity(&sys), Amount::ZERO);
        let plan = plan_redemption(&sys, ISSUER, request(1_000_00)).unwrap();
        let err = execute_plan(&mut sys, &plan).unwrap_err();
        assert!(matches!(err, SettlementError::LegFailed { cause: LegCause::DealerCapacity, .. }));
        assert_eq!(sys.desks[&ISSUER].queue.len(), 1);
    }

    #[test]
    fn intermediated_access_checks_eligibility() {
        let mut sys = system(10_000_00, 0, 5_80);
        sys.desks.get_mut(&ISSUER).unwrap().access = AccessMode::Intermediated;
        let err = plan_redemption(&sys, ISSUER, request(1_000_00)).unwrap_err();
        assert_eq!(err, SettlementError::IneligibleRedeemer { holder: HOLDER, issuer: ISSUER });
        sys.desks.get_mut(&ISSUER).unwrap().eligible.insert(HOLDER);
        assert!(plan_redemption(&sys, ISSUER, request(1_000_00)).is_ok());
    }

    #[test]
    fn mint_conserves_deposits() {
        let mut sys = system(0, 0, 5_80);
        sys.endow_deposit(HOLDER, Amount::from_minor(1_000_00)).unwrap();
        let before = sys.world.total_bank_deposits();
        mint(&mut sys, ISSUER, HOLDER, Amount::from_minor(1_000_00), None).unwrap();
        assert_eq!(sys.world.coins_outstanding(ISSUER), Amount::from_minor(11_000_00));
        assert_eq!(sys.world.deposits(ISSUER), Amount::from_minor(1_000_00));
        assert_eq!(sys.world.total_bank_deposits(), before);
    }

    #[test]
    fn mint_with_bill_purchase_pays_the_seller() {
        let mut sys = system(0, 0, 5_80);
        sys.endow_deposit(HOLDER, Amount::from_minor(1_000_00)).unwrap();
        sys.endow_treasury(LENDER, SecurityClass::Bill, 60, Amount::from_minor(5_000_00)).unwrap();
        let seller_before = sys.world.deposits(LENDER);
        let before = sys.world.total_bank_deposits();
        mint(&mut sys, ISSUER, HOLDER, Amount::from_minor(1_000_00), Some(LENDER)).unwrap();
        assert_eq!(sys.world.deposits(LENDER) - seller_before, Amount::from_minor(1_000_00));
        assert_eq!(sys.world.total_bank_deposits(), before);
    }

    #[test]
    fn genius_rejects_long_bills() {
        let mut sys = system(0, 0, 5_80);
        sys.endow_deposit(HOLDER, Amount::from_minor(1_000_00)).unwrap();
        sys.endow_treasury(LENDER, SecurityClass::Bill, 180, Amount::from_minor(5_000_00)).unwrap();
        let err = plan_mint(&sys, ISSUER, HOLDER, Amount::from_minor(1_000_00), Some(LENDER)).unwrap_err();
        assert!(matches!(err, SettlementError::Instrument(InstrumentError::GeniusIneligible { .. })));
    }

    #[test]
    fn mint_declines() {
        let mut sys = system(0, 0, 5_80);
        sys.endow_deposit(HOLDER, Amount::from_minor(1_000_00)).unwrap();
        let d = sys.desks.get_mut(&ISSUER).unwrap();
        d.policy = ParPolicy::BEST_EFFORT;
        d.conf.secondary_price = Fraction::from_bp(9_990);
        let e = mint(&mut sys, ISSUER, HOLDER, Amount::from_minor(1_00), None).unwrap_err();
        assert!(matches!(e, SettlementError::MintDeclined(_)));
        let d = sys.desks.get_mut(&ISSUER).unwrap();
        d.conf.secondary_price = Fraction::ONE;
        d.r_t = Fraction::ZERO;
        assert!(matches!(plan_mint(&sys, ISSUER, HOLDER, Amount::from_minor(1_00), None), Err(SettlementError::MintDeclined(_))));
    }

    #[test]
    fn intervention_table() {
        let coins = Amount::dollars(1_000);
        let buy = intervene(&ParPolicy::RIGOROUS, Fraction::from_bp(9_990), coins, Fraction::ONE);
        assert_eq!(buy, vec![InterventionAction::BuyCoins { amount: Amount::dollars(1) }]);
        let corridor = ParPolicy::corridor(Fraction::from_bp(50)).unwrap();
        assert!(intervene(&corridor, Fraction::from_bp(9_980), coins, Fraction::ONE).is_empty());
        assert!(matches!(
            intervene(&corridor, Fraction::from_bp(9_940), coins, Fraction::ONE)[..],
            [InterventionAction::BuyCoins { .. }]
        ));
        assert!(intervene(&ParPolicy::BEST_EFFORT, Fraction::from_bp(9_000), coins, Fraction::ONE).is_empty());
        assert!(matches!(
            intervene(&ParPolicy::RIGOROUS, Fraction::from_bp(10_010), coins, Fraction::ONE)[..],
            [InterventionAction::MintCoins { .. }]
        ));
        assert_eq!(ParPolicy::corridor(Fraction::ZERO), Err(SettlementError::ZeroCorridor));
    }

    #[test]
    fn srf_draw_consumes_headroom() {
        let mut sys = system(0, 0, 5_80);
        sys.market.params.srf = true;
        assert_eq!(market::dealer_headroom(&sys, DEALER), Amount::from_minor(16_00));
        let after = srf_leg(&mut sys, DEALER, Amount::from_minor(10_00)).unwrap();
        assert_eq!(after, Amount::from_minor(6_00));
        assert!(sys.world.audit().passed());
    }

    #[test]
    fn srf_errors() {
        let mut sys = system(0, 0, 5_00);
        assert_eq!(srf_leg(&mut sys, DEALER, Amount::from_minor(1_00)), Err(SettlementError::SrfDisabled));
        sys.market.params.srf = true;
        assert!(matches!(srf_leg(&mut sys, DEALER, Amount::from_minor(1_00)), Err(SettlementError::SlrBound { .. })));
    }

    #[test]
    fn halted_chain_queues_without_escrow() {
        let mut sys = system(10_000_00, 0, 5_80);
        sys.desks.get_mut(&ISSUER).unwrap().blocked_until = Some(1);
        let plan = plan_redemption(&sys, ISSUER, request(1_000_00)).unwrap();
        let e = execute_plan(&mut sys, &plan).unwrap_err();
        assert!(matches!(e, SettlementError::LegFailed { cause: LegCause::ChainHalted, .. }));
        sys.world.advance_day();
        assert_eq!(pay_queue(&mut sys, ISSUER), Amount::ZERO);
        sys.world.advance_day();
        assert_eq!(pay_queue(&mut sys, ISSUER), Amount::from_minor(1_000_00));
        mark_delays(&mut sys, ISSUER);
        assert_eq!(sys.desks[&ISSUER].max_delay_days, 2);
    }
}
