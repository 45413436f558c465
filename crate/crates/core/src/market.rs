//! Dealer-intermediated secondary Treasury market.
//!
//! Sellers queue orders; once a day the market fills them against dealer
//! capacity. A dealer can absorb a purchase only if it has SLR headroom (every
//! filled dollar grows its balance sheet) and funding: a private repo from
//! cash lenders, capped per day by the dealer's reserve access, or the
//! standing repo facility when enabled. Fills settle T+1 through the ledger's
//! settlement queue. Flow that cannot be absorbed depresses prices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analytics::slr_with_bound;
use crate::events::EventKind;
use crate::instruments::{decline_roll, face_for_value, roll_repo, set_mark, FundingGap, MarginCall};
use crate::ledger::{AgentId, Day, Instrument, Op, ScheduledBatch, SecurityClass};
use crate::money::{Amount, Fraction};
use crate::system::System;

/// Seller → dealer(s) → buyer intermediation path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DealerChain {
    pub length: u32,
    /// Retained share of seller volume as an exact ratio `num / den`.
    pub retention_num: i64,
    pub retention_den: i64,
}

impl Default for DealerChain {
    /// Two dealers retaining 72.5 of every 216 sold.
    fn default() -> Self {
        DealerChain { length: 2, retention_num: 725, retention_den: 2160 }
    }
}

impl DealerChain {
    pub fn retention_of(&self, seller: Amount) -> Amount {
        seller.mul_div(self.retention_num, self.retention_den)
    }

    pub fn decompose(&self, seller: Amount) -> VolumeDecomposition {
        VolumeDecomposition::with_chain(seller, self.retention_of(seller), self.length)
    }
}

/// Gross trading volume generated as sales travel down a dealer chain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeDecomposition {
    pub seller: Amount,
    pub retention: Amount,
    pub interdealer: Amount,
    pub buyer: Amount,
    pub gross: Amount,
}

impl VolumeDecomposition {
    /// Two-dealer chain: the unretained volume trades once between dealers
    /// and once more to the final buyer.
    pub fn new(seller: Amount, retention: Amount) -> Self {
        Self::with_chain(seller, retention, 2)
    }

    /// Chains longer than two add one inter-dealer hop each.
    pub fn with_chain(seller: Amount, retention: Amount, length: u32) -> Self {
        let onward = seller - retention;
        let interdealer = Amount::from_minor(onward.minor() * length.saturating_sub(1) as i64);
        VolumeDecomposition { seller, retention, interdealer, buyer: onward, gross: seller + interdealer + onward }
    }

    pub fn accumulate(&mut self, other: &VolumeDecomposition) {
        self.seller += other.seller;
        self.retention += other.retention;
        self.interdealer += other.interdealer;
        self.buyer += other.buyer;
        self.gross += other.gross;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Flow that moves prices by `impact_coeff`.
    pub depth: Amount,
    pub impact_coeff: Fraction,
    pub max_dislocation: Fraction,
    /// Bill price move as a share of the long-duration move.
    pub bill_impact_share: Fraction,
    /// Bills rally instead of falling when long-duration paper is dumped.
    pub flight_to_safety: bool,
    pub bill_rally_share: Fraction,
    /// Overrides the per-dealer GSIB-based SLR bound when set.
    pub slr_bound: Option<Fraction>,
    pub srf: bool,
    /// Extra headroom granted by leverage-ratio reform, split across dealers.
    pub eslr_extra: Amount,
    /// Share of a funding gap that a new repo counterparty replaces.
    pub replacement_frac: Fraction,
    pub long_collateral_share: Fraction,
    pub chain: DealerChain,
}

impl Default for MarketParams {
    fn default() -> Self {
        MarketParams {
            depth: Amount::dollars(1_000_000),
            impact_coeff: Fraction::from_bp(100),
            max_dislocation: Fraction::from_bp(500),
            bill_impact_share: Fraction::from_bp(2_500),
            flight_to_safety: false,
            bill_rally_share: Fraction::from_bp(2_500),
            slr_bound: None,
            srf: false,
            eslr_extra: Amount::ZERO,
            replacement_frac: Fraction::from_bp(5_000),
            long_collateral_share: crate::instruments::DEFAULT_LONG_COLLATERAL_SHARE,
            chain: DealerChain::default(),
        }
    }
}

/// Linear impact of flow that dealers could not absorb, capped.
pub fn price_impact(excess_flow: Amount, params: &MarketParams) -> Fraction {
    if !excess_flow.is_positive() || !params.depth.is_positive() {
        return Fraction::ZERO;
    }
    let scaled = Fraction::ratio(excess_flow.min(params.depth.mul_div(1_000, 1)), params.depth);
    (scaled * params.impact_coeff).min(params.max_dislocation)
}

/// Price change of a class for a given long-duration decline. Negative
/// means the price rises.
pub fn class_decline(class: SecurityClass, long_decline: Fraction, params: &MarketParams) -> Fraction {
    match class {
        SecurityClass::LongOffTheRun => long_decline,
        SecurityClass::Bill if params.flight_to_safety => -(long_decline * params.bill_rally_share),
        SecurityClass::Bill => long_decline * params.bill_impact_share,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DealerState {
    pub exposures: Amount,
    pub slr_bound: Fraction,
    /// Private repo funding the dealer can raise per day.
    pub reserve_access: Amount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SalePurpose {
    /// An issuer raising cash for redemptions.
    IssuerFunding,
    /// A repo borrower selling pledged collateral to repay `lender`.
    RepoUnwind { repo: u64, lender: AgentId },
    /// Flow from outside the stablecoin system.
    Exogenous,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaleOrder {
    pub id: u64,
    pub seller: AgentId,
    pub class: SecurityClass,
    /// Face still to be sold.
    pub face: Amount,
    pub submitted: Day,
    pub purpose: SalePurpose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum FundingSegment {
    PrivateRepo { lender: AgentId, amount: Amount },
    Srf { amount: Amount },
}

/// A dealer's share of an order, awaiting T+1 settlement.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fill {
    pub id: u64,
    pub order: u64,
    pub seller: AgentId,
    pub dealer: AgentId,
    pub class: SecurityClass,
    pub lots: Vec<(Day, Amount)>,
    pub cash: Amount,
    pub funding: Vec<FundingSegment>,
    pub purpose: SalePurpose,
    /// Amount of the seller's repo repaid from the proceeds.
    pub repay: Amount,
    pub due: Day,
}

impl Fill {
    pub fn face(&self) -> Amount {
        self.lots.iter().map(|(_, f)| *f).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillReport {
    pub order: u64,
    pub requested_face: Amount,
    pub filled_face: Amount,
    pub filled_cash: Amount,
    pub unfilled_face: Amount,
    pub fills: Vec<u64>,
}

/// Per-class market statistics for one day.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDay {
    pub submitted: Amount,
    pub fills: Amount,
    pub unfilled: Amount,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketDay {
    pub bill: ClassDay,
    pub long: ClassDay,
    pub capacity: Amount,
    pub srf_draws: Amount,
}

impl MarketDay {
    pub fn class(&self, class: SecurityClass) -> &ClassDay {
        match class {
            SecurityClass::Bill => &self.bill,
            SecurityClass::LongOffTheRun => &self.long,
        }
    }

    fn class_mut(&mut self, class: SecurityClass) -> &mut ClassDay {
        match class {
            SecurityClass::Bill => &mut self.bill,
            SecurityClass::LongOffTheRun => &mut self.long,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MarketState {
    pub params: MarketParams,
    pub dealers: BTreeMap<AgentId, DealerState>,
    /// Cash lenders that fund dealer inventory and replace declined repos.
    pub lenders: Vec<AgentId>,
    orders: Vec<SaleOrder>,
    next_order: u64,
    next_fill: u64,
    in_flight: BTreeMap<u64, Fill>,
    earmarked: BTreeMap<(AgentId, SecurityClass, Day), Amount>,
    used_headroom: BTreeMap<AgentId, Amount>,
    used_access: BTreeMap<AgentId, Amount>,
    lender_committed: BTreeMap<AgentId, Amount>,
    /// Repos being repaid from collateral sales: repo id → principal still owed.
    pub unwinding: BTreeMap<u64, Amount>,
    pub today: MarketDay,
    /// Seller flow submitted since the start of the run.
    pub submitted_volume: VolumeDecomposition,
    /// Volume actually absorbed by dealers.
    pub filled_volume: VolumeDecomposition,
    pub srf_total: Amount,
}

impl MarketState {
    pub fn new(params: MarketParams) -> Self {
        MarketState { params, ..Default::default() }
    }

    pub fn begin_day(&mut self) {
        self.used_headroom.clear();
        self.used_access.clear();
        self.today = MarketDay::default();
    }

    pub fn orders(&self) -> &[SaleOrder] {
        &self.orders
    }

    pub fn in_flight(&self) -> impl Iterator<Item = &Fill> {
        self.in_flight.values()
    }

    pub fn earmarked(&self, agent: AgentId, class: SecurityClass, maturity: Day) -> Amount {
        self.earmarked.get(&(agent, class, maturity)).copied().unwrap_or(Amount::ZERO)
    }

    fn earmark(&mut self, agent: AgentId, class: SecurityClass, maturity: Day, face: Amount) {
        let e = self.earmarked.entry((agent, class, maturity)).or_insert(Amount::ZERO);
        *e += face;
        if e.is_zero() {
            self.earmarked.remove(&(agent, class, maturity));
        }
    }

    /// Face of open orders of one seller and class not yet filled.
    pub fn open_face(&self, seller: AgentId, class: SecurityClass) -> Amount {
        self.orders.iter().filter(|o| o.seller == seller && o.class == class).map(|o| o.face).sum()
    }

    /// Face and cash of a purpose's queued orders and unsettled fills.
    pub fn unwind_repay_pending(&self, repo: u64) -> Amount {
        self.in_flight
            .values()
            .filter(|f| matches!(f.purpose, SalePurpose::RepoUnwind { repo: r, .. } if r == repo))
            .map(|f| f.repay)
            .sum()
    }

    fn lender_available(&self, sys: &System, lender: AgentId) -> Amount {
        let committed = self.lender_committed.get(&lender).copied().unwrap_or(Amount::ZERO);
        (sys.world.cash(lender) - committed).max(Amount::ZERO)
    }

    pub fn lender_pool(&self, sys: &System) -> Amount {
        self.lenders.iter().map(|l| self.lender_available(sys, *l)).sum()
    }
}

/// SLR headroom of one dealer net of today's absorbed fills, plus its share
/// of any reform headroom.
pub fn dealer_headroom(sys: &System, dealer: AgentId) -> Amount {
    let m = &sys.market;
    let Some(state) = m.dealers.get(&dealer) else { return Amount::ZERO };
    let Ok(sheet) = sys.world.sheet(dealer) else { return Amount::ZERO };
    let assets = sheet.total_assets(&sys.world.marks);
    let equity = sheet.equity(&sys.world.marks);
    let bound = m.params.slr_bound.unwrap_or(state.slr_bound);
    let base = slr_with_bound(equity, assets, state.exposures, bound).map(|r| r.headroom_assets).unwrap_or(Amount::ZERO);
    let n = m.dealers.len() as i64;
    let idx = m.dealers.keys().position(|d| *d == dealer).unwrap_or(0);
    let reform = if n > 0 { m.params.eslr_extra.allocate(&vec![Amount::from_minor(1); n as usize])[idx] } else { Amount::ZERO };
    let used = m.used_headroom.get(&dealer).copied().unwrap_or(Amount::ZERO);
    (base + reform - used).max(Amount::ZERO)
}

/// Private funding a dealer can still raise today (unbounded with the SRF).
fn dealer_private_funding(sys: &System, dealer: AgentId) -> Amount {
    let m = &sys.market;
    let access = m.dealers.get(&dealer).map(|d| d.reserve_access).unwrap_or(Amount::ZERO);
    let used = m.used_access.get(&dealer).copied().unwrap_or(Amount::ZERO);
    (access - used).max(Amount::ZERO)
}

/// Per-dealer absorbable amount, excluding `seller`.
fn dealer_capacities(sys: &System, seller: Option<AgentId>) -> Vec<(AgentId, Amount)> {
    sys.market
        .dealers
        .keys()
        .filter(|d| Some(**d) != seller)
        .map(|d| {
            let h = dealer_headroom(sys, *d);
            let cap = if sys.market.params.srf { h } else { h.min(dealer_private_funding(sys, *d)) };
            (*d, cap)
        })
        .collect()
}

/// Aggregate amount dealers can absorb today: Σ min(SLR headroom, funding).
pub fn capacity(sys: &System) -> Amount {
    capacity_excluding(sys, None)
}

fn capacity_excluding(sys: &System, seller: Option<AgentId>) -> Amount {
    let total: Amount = dealer_capacities(sys, seller).iter().map(|(_, c)| *c).sum();
    if sys.market.params.srf {
        total
    } else {
        total.min(sys.market.lender_pool(sys))
    }
}

/// Queue a sale. It is filled at the next market clearing.
pub fn submit_order(sys: &mut System, seller: AgentId, class: SecurityClass, face: Amount, purpose: SalePurpose) -> u64 {
    let m = &mut sys.market;
    m.next_order += 1;
    let id = m.next_order;
    let value = face.scale(sys.world.marks.get(class));
    m.orders.push(SaleOrder { id, seller, class, face, submitted: sys.world.today(), purpose });
    m.today.class_mut(class).submitted += value;
    let d = m.params.chain.decompose(value);
    m.submitted_volume.accumulate(&d);
    sys.events.push(&mut sys.world, EventKind::SaleSubmitted { order: id, seller, class, face });
    id
}

/// Submit a sale and clear it immediately against current capacity.
pub fn submit_sale(sys: &mut System, seller: AgentId, face: Amount, class: SecurityClass) -> FillReport {
    let id = submit_order(sys, seller, class, face, SalePurpose::Exogenous);
    clear_order(sys, id)
}

/// Fill every queued order, oldest first. Unfilled face stays queued.
pub fn clear_market(sys: &mut System) -> Vec<FillReport> {
    sys.market.today.capacity = capacity(sys);
    let ids: Vec<u64> = sys.market.orders.iter().map(|o| o.id).collect();
    let reports: Vec<FillReport> = ids.into_iter().map(|id| clear_order(sys, id)).collect();
    for class in SecurityClass::ALL {
        let price = sys.world.marks.get(class);
        let unfilled: Amount =
            sys.market.orders.iter().filter(|o| o.class == class).map(|o| o.face.scale(price)).sum();
        sys.market.today.class_mut(class).unfilled = unfilled;
    }
    reports
}

/// Seller lots available for delivery against an order, earliest maturity first.
fn deliverable_lots(sys: &System, order: &SaleOrder) -> Vec<(Day, Amount)> {
    let lots: Vec<(Day, Amount)> = match order.purpose {
        SalePurpose::RepoUnwind { repo, .. } => sys
            .repos
            .get(repo)
            .map(|p| p.collateral.iter().filter(|l| l.class == order.class).map(|l| (l.maturity, l.face)).collect())
            .unwrap_or_default(),
        _ => sys.repos.free_lots(&sys.world, order.seller, order.class),
    };
    lots.into_iter()
        .map(|(m, f)| (m, f - sys.market.earmarked(order.seller, order.class, m)))
        .filter(|(_, f)| f.is_positive())
        .collect()
}

fn take_lots(lots: &mut Vec<(Day, Amount)>, mut face: Amount) -> Vec<(Day, Amount)> {
    let mut out = Vec::new();
    for (m, f) in lots.iter_mut() {
        if face.is_zero() {
            break;
        }
        let t = (*f).min(face);
        if t.is_positive() {
            out.push((*m, t));
            *f -= t;
            face -= t;
        }
    }
    lots.retain(|(_, f)| f.is_positive());
    out
}

/// Try to fill one queued order.
pub fn clear_order(sys: &mut System, id: u64) -> FillReport {
    let Some(pos) = sys.market.orders.iter().position(|o| o.id == id) else {
        return FillReport {
            order: id,
            requested_face: Amount::ZERO,
            filled_face: Amount::ZERO,
            filled_cash: Amount::ZERO,
            unfilled_face: Amount::ZERO,
            fills: vec![],
        };
    };
    let order = sys.market.orders[pos].clone();
    let price = sys.world.marks.get(order.class);
    let mut lots = deliverable_lots(sys, &order);
    let deliverable: Amount = lots.iter().map(|(_, f)| f).sum();
    let face_wanted = order.face.min(deliverable);
    let caps = dealer_capacities(sys, Some(order.seller));
    let total_cap = capacity_excluding(sys, Some(order.seller));
    let fill_face = if face_wanted.scale(price) <= total_cap {
        face_wanted
    } else {
        Amount::from_minor(((total_cap.minor() as i128 * crate::money::PPM as i128) / price.ppm() as i128) as i64)
            .min(face_wanted)
    };

    let mut report = FillReport {
        order: id,
        requested_face: order.face,
        filled_face: Amount::ZERO,
        filled_cash: Amount::ZERO,
        unfilled_face: order.face,
        fills: vec![],
    };
    if fill_face.is_positive() {
        let weights: Vec<Amount> = caps.iter().map(|(_, c)| *c).collect();
        let shares = fill_face.allocate(&weights);
        let mut repay_left = match order.purpose {
            SalePurpose::RepoUnwind { repo, .. } => {
                let owed = sys.market.unwinding.get(&repo).copied().unwrap_or(Amount::ZERO);
                (owed - sys.market.unwind_repay_pending(repo)).max(Amount::ZERO)
            }
            _ => Amount::ZERO,
        };
        for ((dealer, _), face) in caps.iter().zip(shares) {
            if !face.is_positive() {
                continue;
            }
            let cash = face.scale(price);
            let dealer_lots = take_lots(&mut lots, face);
            let funding = fund_purchase(sys, *dealer, cash);
            let repay = repay_left.min(cash);
            repay_left -= repay;
            let fill = schedule_fill(sys, &order, *dealer, dealer_lots, cash, funding, repay);
            report.filled_face += face;
            report.filled_cash += cash;
            report.fills.push(fill);
        }
    }
    report.unfilled_face = order.face - report.filled_face;
    let m = &mut sys.market;
    m.today.class_mut(order.class).fills += report.filled_cash;
    m.filled_volume.accumulate(&m.params.chain.decompose(report.filled_cash));
    if report.unfilled_face.is_zero() || deliverable.is_zero() {
        m.orders.remove(pos);
    } else {
        m.orders[pos].face = report.unfilled_face;
    }
    if report.unfilled_face.is_positive() {
        sys.events.push(
            &mut sys.world,
            EventKind::SaleUnfilled { order: id, seller: order.seller, class: order.class, face: report.unfilled_face },
        );
    }
    report
}

/// Split a dealer purchase between private repo lenders and the SRF.
fn fund_purchase(sys: &mut System, dealer: AgentId, cash: Amount) -> Vec<FundingSegment> {
    let mut left = cash;
    let mut segs = Vec::new();
    let mut private = dealer_private_funding(sys, dealer).min(left);
    let lenders = sys.market.lenders.clone();
    for lender in lenders {
        if !private.is_positive() {
            break;
        }
        let take = sys.market.lender_available(sys, lender).min(private);
        if take.is_positive() {
            segs.push(FundingSegment::PrivateRepo { lender, amount: take });
            *sys.market.lender_committed.entry(lender).or_insert(Amount::ZERO) += take;
            *sys.market.used_access.entry(dealer).or_insert(Amount::ZERO) += take;
            private -= take;
            left -= take;
        }
    }
    if left.is_positive() && sys.market.params.srf {
        segs.push(FundingSegment::Srf { amount: left });
    }
    *sys.market.used_headroom.entry(dealer).or_insert(Amount::ZERO) += cash;
    segs
}

/// Ledger ops for an SRF draw: reserves to the dealer's bank, a deposit to
/// the dealer, and a Fed repo claim on the dealer.
pub fn srf_ops(sys: &System, dealer: AgentId, amount: Amount) -> Vec<Op> {
    let bank = sys.world.bank_of(dealer).expect("dealers bank somewhere");
    vec![
        Op::Issue { creditor: bank, debtor: AgentId::FED, instrument: Instrument::Reserves, amount },
        Op::Issue { creditor: dealer, debtor: bank, instrument: Instrument::Deposit, amount },
        Op::Issue { creditor: AgentId::FED, debtor: dealer, instrument: Instrument::Repo, amount },
    ]
}

fn schedule_fill(
    sys: &mut System,
    order: &SaleOrder,
    dealer: AgentId,
    lots: Vec<(Day, Amount)>,
    cash: Amount,
    funding: Vec<FundingSegment>,
    repay: Amount,
) -> u64 {
    let mut ops = Vec::new();
    for seg in &funding {
        match *seg {
            FundingSegment::PrivateRepo { lender, amount } => {
                ops.push(Op::Pay { from: lender, to: dealer, amount });
                ops.push(Op::Issue { creditor: lender, debtor: dealer, instrument: Instrument::Repo, amount });
            }
            FundingSegment::Srf { amount } => ops.extend(srf_ops(sys, dealer, amount)),
        }
    }
    ops.push(Op::Pay { from: dealer, to: order.seller, amount: cash });
    for (maturity, face) in &lots {
        ops.push(Op::Transfer {
            from: order.seller,
            to: dealer,
            instrument: Instrument::Treasury { class: order.class, maturity: *maturity },
            amount: *face,
        });
    }
    if let SalePurpose::RepoUnwind { lender, .. } = order.purpose {
        if repay.is_positive() {
            ops.push(Op::Pay { from: order.seller, to: lender, amount: repay });
            ops.push(Op::Extinguish { creditor: lender, debtor: order.seller, instrument: Instrument::Repo, amount: repay });
        }
    }
    let m = &mut sys.market;
    m.next_fill += 1;
    let fid = m.next_fill;
    for (maturity, face) in &lots {
        m.earmark(order.seller, order.class, *maturity, *face);
    }
    let due = sys.world.today() + 1;
    let fill = Fill {
        id: fid,
        order: order.id,
        seller: order.seller,
        dealer,
        class: order.class,
        lots,
        cash,
        funding: funding.clone(),
        purpose: order.purpose,
        repay,
        due,
    };
    let face = fill.face();
    m.in_flight.insert(fid, fill);
    sys.world.schedule(ScheduledBatch { due, tag: fid, ops });
    let label = funding
        .iter()
        .map(|s| match s {
            FundingSegment::PrivateRepo { .. } => "private_repo",
            FundingSegment::Srf { .. } => "srf",
        })
        .collect::<Vec<_>>()
        .join("+");
    sys.events.push(
        &mut sys.world,
        EventKind::SaleFilled {
            order: order.id,
            fill: fid,
            seller: order.seller,
            dealer,
            class: order.class,
            face,
            cash,
            funding: label,
        },
    );
    fid
}

fn release_fill(sys: &mut System, fill: &Fill) {
    let m = &mut sys.market;
    for (maturity, face) in &fill.lots {
        m.earmark(fill.seller, fill.class, *maturity, -*face);
    }
    for seg in &fill.funding {
        if let FundingSegment::PrivateRepo { lender, amount } = seg {
            let e = m.lender_committed.entry(*lender).or_insert(Amount::ZERO);
            *e -= *amount;
            if e.is_zero() {
                m.lender_committed.remove(lender);
            }
        }
    }
}

/// Apply every settlement batch due today, routing outcomes back to fills.
pub fn settle_due(sys: &mut System) {
    let today = sys.world.today();
    for batch in sys.world.take_due(today) {
        let result = sys.world.apply(&batch.ops);
        let Some(fill) = sys.market.in_flight.remove(&batch.tag) else {
            if let Err(e) = result {
                sys.events.push(&mut sys.world, EventKind::SettlementFailed { fill: batch.tag, cause: e.to_string() });
            }
            continue;
        };
        release_fill(sys, &fill);
        match result {
            Ok(()) => {
                let srf: Amount = fill
                    .funding
                    .iter()
                    .map(|s| match s {
                        FundingSegment::Srf { amount } => *amount,
                        _ => Amount::ZERO,
                    })
                    .sum();
                if srf.is_positive() {
                    sys.market.today.srf_draws += srf;
                    sys.market.srf_total += srf;
                    sys.events.push(&mut sys.world, EventKind::SrfDraw { dealer: fill.dealer, amount: srf });
                }
                if let SalePurpose::RepoUnwind { repo, .. } = fill.purpose {
                    sys.repos.release(repo, fill.class, fill.face());
                    record_repayment(sys, repo, fill.repay);
                }
                sys.events.push(
                    &mut sys.world,
                    EventKind::SaleSettled { fill: fill.id, seller: fill.seller, dealer: fill.dealer, cash: fill.cash },
                );
            }
            Err(e) => {
                sys.events.push(&mut sys.world, EventKind::SettlementFailed { fill: fill.id, cause: e.to_string() });
                let face = fill.face();
                submit_order(sys, fill.seller, fill.class, face, fill.purpose);
            }
        }
    }
}

/// Reduce a repo after a partial repayment already posted to the ledger.
/// Once the pledged collateral is gone, the borrower pays any remainder
/// from cash and the lender writes off what is left.
fn record_repayment(sys: &mut System, repo: u64, amount: Amount) {
    if !amount.is_positive() {
        return;
    }
    let mut remaining = {
        let owed = sys.market.unwinding.entry(repo).or_insert(Amount::ZERO);
        *owed = (*owed - amount).max(Amount::ZERO);
        *owed
    };
    if let Some(pos) = sys.repos.get_mut(repo) {
        pos.principal -= amount;
    }
    sys.events.push(&mut sys.world, EventKind::RepoRepaid { repo, amount, remaining });
    let exhausted = sys.repos.get(repo).is_none_or(|p| p.collateral.iter().all(|l| l.face.is_zero()))
        && sys.market.unwind_repay_pending(repo).is_zero();
    if remaining.is_positive() && exhausted {
        if let Some(pos) = sys.repos.get(repo).cloned() {
            let cash = sys.world.cash(pos.counterparty).min(remaining);
            if cash.is_positive() && pay_down(sys, repo, pos.counterparty, pos.lender, cash, Vec::new()) {
                remaining -= cash;
                sys.events.push(&mut sys.world, EventKind::RepoRepaid { repo, amount: cash, remaining });
            }
            if remaining.is_positive() {
                let op = Op::Extinguish { creditor: pos.lender, debtor: pos.counterparty, instrument: Instrument::Repo, amount: remaining };
                if sys.world.apply(&[op]).is_ok() {
                    sys.events.push(
                        &mut sys.world,
                        EventKind::RepoWrittenOff { repo, lender: pos.lender, borrower: pos.counterparty, loss: remaining },
                    );
                    remaining = Amount::ZERO;
                }
            }
        }
    }
    if remaining.is_zero() {
        sys.market.unwinding.remove(&repo);
        sys.repos.remove(repo);
        sys.market.orders.retain(|o| !matches!(o.purpose, SalePurpose::RepoUnwind { repo: r, .. } if r == repo));
    }
}

/// Second legs due today: roll each repo unless its lender has chosen not
/// to, in which case the borrower faces a funding gap.
pub fn process_second_legs(sys: &mut System) {
    let today = sys.world.today();
    let due: Vec<u64> = sys
        .repos
        .iter()
        .filter(|p| p.second_leg_day == today && !sys.market.unwinding.contains_key(&p.id))
        .map(|p| p.id)
        .collect();
    for id in due {
        let Some(pos) = sys.repos.get(id).cloned() else { continue };
        let desk = sys.desks.get(&pos.lender);
        if desk.is_some_and(|d| d.non_roll.contains(&id)) {
            match decline_roll(&sys.world, &sys.repos, id) {
                Ok(gap) => {
                    sys.events.push(&mut sys.world, EventKind::RepoNotRolled { repo: id, lender: pos.lender, borrower: pos.counterparty });
                    sys.events.push(
                        &mut sys.world,
                        EventKind::FundingGap { repo: id, borrower: gap.borrower, lender: gap.lender, gap: gap.gap },
                    );
                    funding_gap_liquidation(sys, &gap);
                }
                Err(e) => sys.events.push(&mut sys.world, EventKind::SettlementFailed { fill: 0, cause: format!("repo {id}: {e}") }),
            }
        } else {
            let rate = desk.map(|d| d.repo_rate).unwrap_or(pos.rate);
            match roll_repo(&mut sys.world, &mut sys.repos, id, rate) {
                Ok(new) => sys.events.push(&mut sys.world, EventKind::RepoRolled { old: id, new: new.id, principal: new.principal }),
                Err(e) => sys.events.push(&mut sys.world, EventKind::SettlementFailed { fill: 0, cause: format!("repo {id} roll: {e}") }),
            }
        }
    }
}

/// A borrower whose repo was not rolled first pays what it can from cash,
/// then replaces up to `replacement_frac` of the gap with a new repo from
/// cash lenders, and sells pledged collateral for the rest.
pub fn funding_gap_liquidation(sys: &mut System, gap: &FundingGap) {
    let FundingGap { repo_id, borrower, lender, .. } = *gap;
    // interest due today becomes part of the claim so every repayment
    // extinguishes claim one for one
    let principal = sys.repos.get(repo_id).map(|p| p.principal).unwrap_or(Amount::ZERO);
    let interest = gap.gap - principal;
    if interest.is_positive() {
        let op = Op::Issue { creditor: lender, debtor: borrower, instrument: Instrument::Repo, amount: interest };
        if sys.world.apply(&[op]).is_ok() {
            if let Some(p) = sys.repos.get_mut(repo_id) {
                p.principal += interest;
            }
        }
    }
    let mut owed = sys.repos.get(repo_id).map(|p| p.principal).unwrap_or(Amount::ZERO);
    let gap_total = owed;
    let own = sys.world.cash(borrower).min(owed);
    if own.is_positive() && pay_down(sys, repo_id, borrower, lender, own, Vec::new()) {
        owed -= own;
    }
    let target = gap_total.scale_floor(sys.market.params.replacement_frac).min(owed);
    let mut ops = Vec::new();
    let mut replaced = Amount::ZERO;
    for l in sys.market.lenders.clone() {
        if replaced >= target {
            break;
        }
        let take = sys.market.lender_available(sys, l).min(target - replaced);
        if take.is_positive() {
            ops.push(Op::Pay { from: l, to: borrower, amount: take });
            ops.push(Op::Issue { creditor: l, debtor: borrower, instrument: Instrument::Repo, amount: take });
            replaced += take;
        }
    }
    if replaced.is_positive() && pay_down(sys, repo_id, borrower, lender, replaced, ops) {
        owed -= replaced;
        sys.events.push(&mut sys.world, EventKind::RepoReplaced { repo: repo_id, lender, amount: replaced });
    }
    if owed.is_zero() {
        sys.market.unwinding.remove(&repo_id);
        sys.repos.remove(repo_id);
        return;
    }
    sys.market.unwinding.insert(repo_id, owed);
    let Some(pos) = sys.repos.get(repo_id).cloned() else { return };
    let marks = sys.world.marks;
    let pledged = |c: SecurityClass| pos.collateral.iter().filter(|l| l.class == c).map(|l| l.face).sum::<Amount>();
    let (long_avail, bill_avail) = (pledged(SecurityClass::LongOffTheRun), pledged(SecurityClass::Bill));
    let mut long_face = face_for_value(owed.scale(sys.market.params.long_collateral_share), marks.long).min(long_avail);
    let bill_face = face_for_value(owed - long_face.scale(marks.long), marks.bill).min(bill_avail);
    let covered = long_face.scale(marks.long) + bill_face.scale(marks.bill);
    if covered < owed {
        long_face = face_for_value(owed - bill_face.scale(marks.bill), marks.long).min(long_avail);
    }
    let purpose = SalePurpose::RepoUnwind { repo: repo_id, lender };
    if long_face.is_positive() {
        submit_order(sys, borrower, SecurityClass::LongOffTheRun, long_face, purpose);
    }
    if bill_face.is_positive() {
        submit_order(sys, borrower, SecurityClass::Bill, bill_face, purpose);
    }
}

/// Pay part of a repo back immediately; `pre` funds the payment.
fn pay_down(sys: &mut System, repo: u64, borrower: AgentId, lender: AgentId, amount: Amount, mut pre: Vec<Op>) -> bool {
    pre.push(Op::Pay { from: borrower, to: lender, amount });
    pre.push(Op::Extinguish { creditor: lender, debtor: borrower, instrument: Instrument::Repo, amount });
    match sys.world.apply(&pre) {
        Ok(()) => {
            if let Some(pos) = sys.repos.get_mut(repo) {
                pos.principal -= amount;
            }
            true
        }
        Err(e) => {
            sys.events.push(
                &mut sys.world,
                EventKind::SettlementFailed { fill: 0, cause: format!("repo {repo} paydown: {e}") },
            );
            false
        }
    }
}

/// Re-mark Treasury prices from today's unabsorbed flow.
pub fn update_marks(sys: &mut System) -> Vec<MarginCall> {
    let excess = sys.market.today.bill.unfilled + sys.market.today.long.unfilled;
    let decline = price_impact(excess, &sys.market.params);
    let mut calls = Vec::new();
    for class in SecurityClass::ALL {
        let price = Fraction::ONE - class_decline(class, decline, &sys.market.params);
        if price != sys.world.marks.get(class) {
            calls.extend(set_mark(&mut sys.world, &mut sys.repos, class, price));
            sys.events.push(&mut sys.world, EventKind::PriceMarked { class, price });
        }
    }
    calls
}
