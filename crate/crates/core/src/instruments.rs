//! Backing-asset instruments: Treasury bills, reverse repo with haircuts, and
//! the period-by-period asset progression of an issuer's portfolio.
//!
//! Repo collateral is recorded as a pledge on the borrower's Treasury lots
//! rather than moved to the lender's books. The lender's asset is the repo
//! claim; the pledge is what it can seize and liquidate if the borrower fails
//! to repurchase.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{AgentId, Day, Instrument, LedgerError, LedgerWorld, Marks, Op, SecurityClass};
use crate::money::{Amount, Fraction, PPM};

/// Longest bill maturity, in days at purchase, that a compliant issuer may hold.
pub const GENIUS_MAX_BILL_DAYS: Day = 93;

/// Tri-party repo haircut used when none is configured.
pub const DEFAULT_HAIRCUT: Fraction = Fraction::from_bp(200);

/// Share of issuer repo collateral posted in long-duration, off-the-run securities.
pub const DEFAULT_LONG_COLLATERAL_SHARE: Fraction = Fraction::from_ppm(750_000);

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum InstrumentError {
    #[error("collateral worth {available} cannot cover required {required}")]
    InsufficientCollateral { required: Amount, available: Amount },
    #[error("{agent} has {available} of cash, needs {needed}")]
    InsufficientCash { agent: AgentId, needed: Amount, available: Amount },
    #[error("second leg is due on day {due}, today is {today}")]
    WrongDay { due: Day, today: Day },
    #[error("repo {0} not found")]
    UnknownRepo(u64),
    #[error("bill maturing day {maturity} is {days} days out, beyond the {GENIUS_MAX_BILL_DAYS}-day limit")]
    GeniusIneligible { maturity: Day, days: Day },
    #[error("repo term must be at least one day")]
    ZeroTerm,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreasuryBill {
    pub face: Amount,
    pub maturity_day: Day,
    /// Price as a fraction of face.
    pub market_price: Fraction,
    pub on_the_run: bool,
}

impl TreasuryBill {
    pub fn value(&self) -> Amount {
        self.face.scale(self.market_price)
    }

    pub fn genius_eligible(&self, purchase_day: Day) -> bool {
        self.maturity_day.saturating_sub(purchase_day) <= GENIUS_MAX_BILL_DAYS
    }
}

/// Reject bills beyond the maturity limit when the issuer is flagged compliant.
pub fn check_genius(bills: &[TreasuryBill], purchase_day: Day, compliant: bool) -> Result<(), InstrumentError> {
    if !compliant {
        return Ok(());
    }
    match bills.iter().find(|b| !b.genius_eligible(purchase_day)) {
        Some(b) => Err(InstrumentError::GeniusIneligible {
            maturity: b.maturity_day,
            days: b.maturity_day - purchase_day,
        }),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepoDirection {
    ReverseRepoLend,
}

/// A pledged slice of one Treasury lot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollateralLot {
    pub class: SecurityClass,
    pub maturity: Day,
    pub face: Amount,
}

/// Market value of pledged lots, one rounding per class.
pub fn collateral_value(lots: &[CollateralLot], marks: &Marks) -> Amount {
    SecurityClass::ALL
        .iter()
        .map(|c| lots.iter().filter(|l| l.class == *c).map(|l| l.face).sum::<Amount>().scale(marks.get(*c)))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoPosition {
    pub id: u64,
    pub direction: RepoDirection,
    /// Cash lender (the reverse-repo side).
    pub lender: AgentId,
    /// Borrower, who must repurchase at the second leg.
    pub counterparty: AgentId,
    pub principal: Amount,
    pub collateral: Vec<CollateralLot>,
    pub collateral_value: Amount,
    pub haircut: Fraction,
    /// Simple interest per day.
    pub rate: Fraction,
    pub start_day: Day,
    pub second_leg_day: Day,
}

impl RepoPosition {
    pub fn term_days(&self) -> Day {
        self.second_leg_day - self.start_day
    }

    pub fn is_overnight(&self) -> bool {
        self.term_days() == 1
    }

    /// Interest owed at the second leg.
    pub fn interest(&self) -> Amount {
        self.principal.scale(Fraction::from_ppm(self.rate.ppm() * self.term_days() as i64))
    }

    /// Collateral value below which a term repo is called for margin. The
    /// threshold sits at half the haircut so a once-a-day check catches what
    /// a twice-daily check would.
    pub fn margin_floor(&self) -> Amount {
        self.principal.scale_ceil(Fraction::ONE + Fraction::from_ppm(self.haircut.ppm() / 2))
    }
}

/// Outstanding repo positions, keyed by id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RepoBook {
    positions: BTreeMap<u64, RepoPosition>,
    next_id: u64,
}

impl RepoBook {
    pub fn get(&self, id: u64) -> Option<&RepoPosition> {
        self.positions.get(&id)
    }

    pub fn get_mut(&mut self, id: u64) -> Option<&mut RepoPosition> {
        self.positions.get_mut(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RepoPosition> {
        self.positions.values()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn remove(&mut self, id: u64) -> Option<RepoPosition> {
        self.positions.remove(&id)
    }

    fn insert(&mut self, mut pos: RepoPosition) -> RepoPosition {
        self.next_id += 1;
        pos.id = self.next_id;
        self.positions.insert(pos.id, pos.clone());
        pos
    }

    pub fn lent_by(&self, lender: AgentId) -> Vec<&RepoPosition> {
        self.positions.values().filter(|p| p.lender == lender).collect()
    }

    pub fn borrowed_by(&self, borrower: AgentId) -> Vec<&RepoPosition> {
        self.positions.values().filter(|p| p.counterparty == borrower).collect()
    }

    /// Face of one lot already pledged by `agent`.
    pub fn pledged_face(&self, agent: AgentId, class: SecurityClass, maturity: Day) -> Amount {
        self.positions
            .values()
            .filter(|p| p.counterparty == agent)
            .flat_map(|p| p.collateral.iter())
            .filter(|l| l.class == class && l.maturity == maturity)
            .map(|l| l.face)
            .sum()
    }

    /// Unpledged lots of one class, earliest maturity first.
    pub fn free_lots(&self, world: &LedgerWorld, agent: AgentId, class: SecurityClass) -> Vec<(Day, Amount)> {
        let Ok(sheet) = world.sheet(agent) else { return Vec::new() };
        sheet
            .treasury_lots(class)
            .into_iter()
            .map(|(m, face)| (m, face - self.pledged_face(agent, class, m)))
            .filter(|(_, f)| f.is_positive())
            .collect()
    }

    pub fn free_face(&self, world: &LedgerWorld, agent: AgentId, class: SecurityClass) -> Amount {
        self.free_lots(world, agent, class).iter().map(|(_, f)| *f).sum()
    }

    /// Market value of the borrower's unpledged Treasuries.
    pub fn free_value(&self, world: &LedgerWorld, agent: AgentId) -> Amount {
        SecurityClass::ALL
            .iter()
            .map(|c| self.free_face(world, agent, *c).scale(world.marks.get(*c)))
            .sum()
    }

    /// Release pledged lots whose face the borrower no longer holds (after
    /// a sale of pledged securities settles).
    pub fn release(&mut self, id: u64, class: SecurityClass, mut face: Amount) {
        if let Some(pos) = self.positions.get_mut(&id) {
            for lot in pos.collateral.iter_mut().filter(|l| l.class == class) {
                let take = lot.face.min(face);
                lot.face -= take;
                face -= take;
            }
            pos.collateral.retain(|l| l.face.is_positive());
        }
    }
}

/// Face needed so that `face * price >= value`.
pub fn face_for_value(value: Amount, price: Fraction) -> Amount {
    if !value.is_positive() {
        return Amount::ZERO;
    }
    let num = value.minor() as i128 * PPM as i128;
    let den = price.ppm() as i128;
    Amount::from_minor(((num + den - 1) / den) as i64)
}

/// Collateral required at inception: principal × (1 + H), rounded up.
pub fn required_collateral(principal: Amount, haircut: Fraction) -> Amount {
    principal.scale_ceil(Fraction::ONE + haircut)
}

/// Pick unpledged lots worth at least `required`, aiming for `long_share`
/// of the value in long-duration securities and falling back to whichever
/// class is available.
pub fn select_collateral(
    world: &LedgerWorld,
    book: &RepoBook,
    borrower: AgentId,
    required: Amount,
    long_share: Fraction,
) -> Result<Vec<CollateralLot>, InstrumentError> {
    use SecurityClass::*;
    let marks = world.marks;
    let avail_l = book.free_face(world, borrower, LongOffTheRun);
    let avail_b = book.free_face(world, borrower, Bill);
    let val = |c: SecurityClass, f: Amount| f.scale(marks.get(c));

    let mut face_l = face_for_value(required.scale(long_share), marks.long).min(avail_l);
    let face_b = face_for_value(required - val(LongOffTheRun, face_l), marks.bill).min(avail_b);
    if val(LongOffTheRun, face_l) + val(Bill, face_b) < required {
        face_l = face_for_value(required - val(Bill, face_b), marks.long).min(avail_l);
    }
    let got = val(LongOffTheRun, face_l) + val(Bill, face_b);
    if got < required {
        return Err(InstrumentError::InsufficientCollateral { required, available: got });
    }
    let mut lots = Vec::new();
    for (class, mut face) in [(LongOffTheRun, face_l), (Bill, face_b)] {
        for (maturity, free) in book.free_lots(world, borrower, class) {
            if face.is_zero() {
                break;
            }
            let take = free.min(face);
            lots.push(CollateralLot { class, maturity, face: take });
            face -= take;
        }
    }
    Ok(lots)
}

/// Terms for a new reverse repo.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RepoTerms {
    pub principal: Amount,
    pub haircut: Fraction,
    pub term_days: Day,
    pub rate: Fraction,
    pub long_share: Fraction,
}

impl RepoTerms {
    pub fn overnight(principal: Amount, haircut: Fraction, rate: Fraction) -> Self {
        RepoTerms { principal, haircut, term_days: 1, rate, long_share: DEFAULT_LONG_COLLATERAL_SHARE }
    }
}

/// First leg of a reverse repo: cash moves lender → borrower, the lender
/// books a claim on the borrower, and borrower collateral is pledged.
pub fn open_reverse_repo(
    world: &mut LedgerWorld,
    book: &mut RepoBook,
    lender: AgentId,
    borrower: AgentId,
    terms: RepoTerms,
) -> Result<RepoPosition, InstrumentError> {
    let cash = world.cash(lender);
    if cash < terms.principal {
        return Err(InstrumentError::InsufficientCash { agent: lender, needed: terms.principal, available: cash });
    }
    let mut ops = world.cash_payment(lender, borrower, terms.principal)?;
    ops.push(Op::Issue { creditor: lender, debtor: borrower, instrument: Instrument::Repo, amount: terms.principal });
    book_repo(world, book, lender, borrower, terms, ops)
}

/// Record a repo whose cash leg happened outside the simulation (initial
/// portfolios): only the claim and the pledge are booked.
pub fn book_existing_repo(
    world: &mut LedgerWorld,
    book: &mut RepoBook,
    lender: AgentId,
    borrower: AgentId,
    terms: RepoTerms,
) -> Result<RepoPosition, InstrumentError> {
    let ops = vec![Op::Issue { creditor: lender, debtor: borrower, instrument: Instrument::Repo, amount: terms.principal }];
    book_repo(world, book, lender, borrower, terms, ops)
}

fn book_repo(
    world: &mut LedgerWorld,
    book: &mut RepoBook,
    lender: AgentId,
    borrower: AgentId,
    terms: RepoTerms,
    ops: Vec<Op>,
) -> Result<RepoPosition, InstrumentError> {
    if terms.term_days == 0 {
        return Err(InstrumentError::ZeroTerm);
    }
    let required = required_collateral(terms.principal, terms.haircut);
    let collateral = select_collateral(world, book, borrower, required, terms.long_share)?;
    world.apply(&ops)?;
    let today = world.today();
    let pos = RepoPosition {
        id: 0,
        direction: RepoDirection::ReverseRepoLend,
        lender,
        counterparty: borrower,
        principal: terms.principal,
        collateral_value: collateral_value(&collateral, &world.marks),
        collateral,
        haircut: terms.haircut,
        rate: terms.rate,
        start_day: today,
        second_leg_day: today + terms.term_days,
    };
    Ok(book.insert(pos))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementOutcome {
    pub repo_id: u64,
    pub performed: bool,
    pub principal: Amount,
    pub interest: Amount,
    /// Cash (performance) or collateral value (default) the lender received.
    pub lender_received: Amount,
    pub loss: Amount,
}

/// Lender loss on a defaulted repo when collateral worth principal × (1 + H)
/// at the first leg loses Δ of the first-leg price before liquidation.
/// Declines up to the haircut are fully absorbed.
pub fn default_loss(principal: Amount, haircut: Fraction, decline: Fraction) -> Amount {
    principal.scale((decline - haircut).max(Fraction::ZERO))
}

/// Second leg. On performance the borrower pays principal plus interest. On
/// default the lender seizes pledged collateral worth up to the principal at
/// current marks, and the outcome reports the liquidation loss.
pub fn close_or_default_repo(
    world: &mut LedgerWorld,
    book: &mut RepoBook,
    id: u64,
    counterparty_performs: bool,
    market_decline: Fraction,
) -> Result<SettlementOutcome, InstrumentError> {
    let pos = book.get(id).ok_or(InstrumentError::UnknownRepo(id))?.clone();
    let today = world.today();
    if today != pos.second_leg_day {
        return Err(InstrumentError::WrongDay { due: pos.second_leg_day, today });
    }
    let extinguish =
        Op::Extinguish { creditor: pos.lender, debtor: pos.counterparty, instrument: Instrument::Repo, amount: pos.principal };
    let outcome = if counterparty_performs {
        let interest = pos.interest();
        let owed = pos.principal + interest;
        let cash = world.cash(pos.counterparty);
        if cash < owed {
            return Err(InstrumentError::InsufficientCash { agent: pos.counterparty, needed: owed, available: cash });
        }
        let mut ops = world.cash_payment(pos.counterparty, pos.lender, owed)?;
        ops.push(extinguish);
        world.apply(&ops)?;
        SettlementOutcome { repo_id: id, performed: true, principal: pos.principal, interest, lender_received: owed, loss: Amount::ZERO }
    } else {
        let value = collateral_value(&pos.collateral, &world.marks);
        let mut ops = vec![extinguish];
        let mut seized = Amount::ZERO;
        for lot in &pos.collateral {
            let face = if value > pos.principal { lot.face.mul_div(pos.principal.minor(), value.minor()) } else { lot.face };
            seized += face.scale(world.marks.get(lot.class));
            ops.push(Op::Transfer {
                from: pos.counterparty,
                to: pos.lender,
                instrument: Instrument::Treasury { class: lot.class, maturity: lot.maturity },
                amount: face,
            });
        }
        world.apply(&ops)?;
        SettlementOutcome {
            repo_id: id,
            performed: false,
            principal: pos.principal,
            interest: Amount::ZERO,
            lender_received: seized,
            loss: default_loss(pos.principal, pos.haircut, market_decline),
        }
    };
    book.remove(id);
    Ok(outcome)
}

/// Borrower's need for new funding when the lender declines to roll.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FundingGap {
    pub repo_id: u64,
    pub borrower: AgentId,
    pub lender: AgentId,
    pub gap: Amount,
    pub collateral: Vec<CollateralLot>,
}

/// Roll an overnight repo: the old position closes at par and a new one opens
/// at `new_rate` against the same (re-marked, topped-up if possible)
/// collateral. Interest is paid in cash when the borrower has it and added
/// to principal otherwise.
pub fn roll_repo(
    world: &mut LedgerWorld,
    book: &mut RepoBook,
    id: u64,
    new_rate: Fraction,
) -> Result<RepoPosition, InstrumentError> {
    let pos = book.get(id).ok_or(InstrumentError::UnknownRepo(id))?.clone();
    let today = world.today();
    if today != pos.second_leg_day {
        return Err(InstrumentError::WrongDay { due: pos.second_leg_day, today });
    }
    let interest = pos.interest();
    let (ops, principal) = if world.cash(pos.counterparty) >= interest {
        (world.cash_payment(pos.counterparty, pos.lender, interest)?, pos.principal)
    } else {
        (
            vec![Op::Issue { creditor: pos.lender, debtor: pos.counterparty, instrument: Instrument::Repo, amount: interest }],
            pos.principal + interest,
        )
    };
    world.apply(&ops)?;
    book.remove(id);
    let mut collateral = pos.collateral.clone();
    let value = collateral_value(&collateral, &world.marks);
    let required = required_collateral(principal, pos.haircut);
    if value < required {
        if let Ok(extra) = select_collateral(world, book, pos.counterparty, required - value, DEFAULT_LONG_COLLATERAL_SHARE) {
            collateral.extend(extra);
        }
    }
    let new = RepoPosition {
        id: 0,
        principal,
        collateral_value: collateral_value(&collateral, &world.marks),
        collateral,
        rate: new_rate,
        start_day: today,
        second_leg_day: today + 1,
        ..pos
    };
    Ok(book.insert(new))
}

/// Declare that the lender will not roll: the borrower now owes principal plus
/// interest today and must fund it elsewhere.
pub fn decline_roll(world: &LedgerWorld, book: &RepoBook, id: u64) -> Result<FundingGap, InstrumentError> {
    let pos = book.get(id).ok_or(InstrumentError::UnknownRepo(id))?;
    if world.today() != pos.second_leg_day {
        return Err(InstrumentError::WrongDay { due: pos.second_leg_day, today: world.today() });
    }
    Ok(FundingGap {
        repo_id: id,
        borrower: pos.counterparty,
        lender: pos.lender,
        gap: pos.principal + pos.interest(),
        collateral: pos.collateral.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginCall {
    pub repo_id: u64,
    pub borrower: AgentId,
    pub collateral_value: Amount,
    pub floor: Amount,
}

/// Apply a relative price tick to one security class, re-mark all pledged
/// collateral, and return a margin call for each under-margined term repo.
pub fn mark_treasuries(world: &mut LedgerWorld, book: &mut RepoBook, class: SecurityClass, tick: Fraction) -> Vec<MarginCall> {
    let price = (world.marks.get(class) * (Fraction::ONE + tick)).max(Fraction::from_ppm(1));
    set_mark(world, book, class, price)
}

/// Set one class's price directly and re-mark collateral.
pub fn set_mark(world: &mut LedgerWorld, book: &mut RepoBook, class: SecurityClass, price: Fraction) -> Vec<MarginCall> {
    world.marks.set(class, price);
    let mut calls = Vec::new();
    for pos in book.positions.values_mut() {
        pos.collateral_value = collateral_value(&pos.collateral, &world.marks);
        if !pos.is_overnight() && pos.collateral_value < pos.margin_floor() {
            calls.push(MarginCall {
                repo_id: pos.id,
                borrower: pos.counterparty,
                collateral_value: pos.collateral_value,
                floor: pos.margin_floor(),
            });
        }
    }
    calls
}

/// The asset side of an issuer's backing portfolio over one period.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortfolioState {
    pub treasuries: Vec<TreasuryBill>,
    pub deposits: Amount,
    /// Per-period Treasury return, also applied to repo principal.
    pub r_t: Fraction,
    pub r_d: Fraction,
    pub repo: Vec<RepoPosition>,
}

impl PortfolioState {
    /// Treasury holdings at market.
    pub fn t(&self) -> Amount {
        self.treasuries.iter().map(|b| b.value()).sum()
    }

    pub fn repo_principal(&self) -> Amount {
        self.repo.iter().map(|r| r.principal).sum()
    }

    /// Total backing assets A = T + D + Σ repo principal.
    pub fn assets(&self) -> Amount {
        self.t() + self.deposits + self.repo_principal()
    }
}

/// The four increments of one asset-progression step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTerms {
    pub treasury_interest: Amount,
    pub capital_gain: Amount,
    pub deposit_interest: Amount,
    pub deposit_change: Amount,
}

impl StepTerms {
    pub fn total(&self) -> Amount {
        self.treasury_interest + self.capital_gain + self.deposit_interest + self.deposit_change
    }
}

/// Advance a portfolio one period: interest on Treasuries and repo at r_T and
/// on deposits at r_D is credited to deposits, every Treasury price moves by
/// the relative change `dt_price`, and `dd` is the period's deposit flow.
/// The next-period assets equal A + r_T·T + (T' − T) + r_D·D + ΔD exactly.
pub fn step_portfolio(p: &PortfolioState, dt_price: Fraction, dd: Amount) -> (PortfolioState, StepTerms) {
    let treasury_interest = (p.t() + p.repo_principal()).scale(p.r_t);
    let deposit_interest = p.deposits.scale(p.r_d);
    let treasuries: Vec<TreasuryBill> = p
        .treasuries
        .iter()
        .map(|b| TreasuryBill {
            market_price: (b.market_price * (Fraction::ONE + dt_price)).max(Fraction::from_ppm(1)),
            ..*b
        })
        .collect();
    let next = PortfolioState {
        deposits: p.deposits + treasury_interest + deposit_interest + dd,
        treasuries,
        ..p.clone()
    };
    let capital_gain = next.t() - p.t();
    (next, StepTerms { treasury_interest, capital_gain, deposit_interest, deposit_change: dd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::AgentKind;

    fn d(x: i64) -> Amount {
        Amount::dollars(x)
    }

    fn bill(face: Amount) -> TreasuryBill {
        TreasuryBill { face, maturity_day: 30, market_price: Fraction::ONE, on_the_run: false }
    }

    fn portfolio(t: Amount, r_t: Fraction) -> PortfolioState {
        PortfolioState { treasuries: vec![bill(t)], deposits: Amount::ZERO, r_t, r_d: Fraction::ZERO, repo: vec![] }
    }

    #[test]
    fn step_zero_case() {
        let p = portfolio(Amount::from_minor(100_000_00), Fraction::ZERO);
        let (n, _) = step_portfolio(&p, Fraction::ZERO, Amount::ZERO);
        assert_eq!(n.assets(), p.assets());
    }

    #[test]
    fn step_interest_only() {
        let p = portfolio(Amount::from_minor(100_000_00), Fraction::from_bp(100));
        let (n, t) = step_portfolio(&p, Fraction::ZERO, Amount::ZERO);
        assert_eq!(n.assets() - p.assets(), Amount::from_minor(1_000_00));
        assert_eq!(t.treasury_interest, Amount::from_minor(1_000_00));
    }

    #[test]
    fn step_capital_loss() {
        let p = portfolio(Amount::from_minor(100_000_00), Fraction::ZERO);
        let (n, t) = step_portfolio(&p, Fraction::from_bp(-50), Amount::ZERO);
        assert_eq!(t.capital_gain, Amount::from_minor(-500_00));
        assert_eq!(n.assets() - p.assets(), Amount::from_minor(-500_00));
    }

    #[test]
    fn genius_limit() {
        let ok = TreasuryBill { maturity_day: 93, ..bill(d(1)) };
        let late = TreasuryBill { maturity_day: 94, ..bill(d(1)) };
        assert!(check_genius(&[ok], 0, true).is_ok());
        assert!(matches!(check_genius(&[ok, late], 0, true), Err(InstrumentError::GeniusIneligible { days: 94, .. })));
        assert!(check_genius(&[late], 0, false).is_ok());
    }

    fn repo_world(collateral: Amount) -> (LedgerWorld, RepoBook) {
        let mut w = LedgerWorld::new();
        w.add_bank(AgentId::bank(0));
        w.add_depositor(AgentId::issuer(0), AgentId::bank(0));
        w.add_depositor(AgentId::dealer(0), AgentId::bank(0));
        w.apply(&[
            Op::Endow { agent: AgentId::FED, class: SecurityClass::Bill, maturity: 60, face: d(1_000) },
            Op::Issue { creditor: AgentId::bank(0), debtor: AgentId::FED, instrument: Instrument::Reserves, amount: d(1_000) },
            Op::Issue { creditor: AgentId::issuer(0), debtor: AgentId::bank(0), instrument: Instrument::Deposit, amount: d(1_000) },
            Op::Endow { agent: AgentId::dealer(0), class: SecurityClass::LongOffTheRun, maturity: 3650, face: collateral },
        ])
        .unwrap();
        (w, RepoBook::default())
    }

    #[test]
    fn haircut_sizes_collateral() {
        let (mut w, mut book) = repo_world(d(1_000));
        let terms = RepoTerms::overnight(Amount::from_minor(100_00), DEFAULT_HAIRCUT, Fraction::ZERO);
        let pos = open_reverse_repo(&mut w, &mut book, AgentId::issuer(0), AgentId::dealer(0), terms).unwrap();
        assert!(pos.collateral_value >= Amount::from_minor(102_00));
        assert_eq!(pos.second_leg_day, 1);
        assert!(w.audit().passed());

        let terms = RepoTerms::overnight(Amount::from_minor(100_00), Fraction::ZERO, Fraction::ZERO);
        let pos = open_reverse_repo(&mut w, &mut book, AgentId::issuer(0), AgentId::dealer(0), terms).unwrap();
        assert_eq!(pos.collateral_value, Amount::from_minor(100_00));
    }

    #[test]
    fn thin_collateral_is_rejected() {
        let (mut w, mut book) = repo_world(Amount::from_minor(101_00));
        let before = w.clone();
        let terms = RepoTerms::overnight(Amount::from_minor(100_00), DEFAULT_HAIRCUT, Fraction::ZERO);
        let err = open_reverse_repo(&mut w, &mut book, AgentId::issuer(0), AgentId::dealer(0), terms).unwrap_err();
        assert!(matches!(err, InstrumentError::InsufficientCollateral { .. }));
        assert_eq!(w, before);
    }

    #[test]
    fn performing_round_trip_moves_only_interest() {
        let (mut w, mut book) = repo_world(d(1_000));
        let eq_i = w.equity(AgentId::issuer(0)).unwrap();
        let eq_d = w.equity(AgentId::dealer(0)).unwrap();
        let terms = RepoTerms::overnight(d(100), DEFAULT_HAIRCUT, Fraction::from_bp(5));
        let pos = open_reverse_repo(&mut w, &mut book, AgentId::issuer(0), AgentId::dealer(0), terms).unwrap();
        // the dealer needs the interest in cash
        w.apply(&[Op::Transfer {
            from: AgentId::issuer(0),
            to: AgentId::dealer(0),
            instrument: Instrument::Deposit,
            amount: Amount::from_minor(1_00),
        }])
        .unwrap();
        let eq_i = eq_i - Amount::from_minor(1_00);
        let eq_d = eq_d + Amount::from_minor(1_00);
        w.advance_day();
        let out = close_or_default_repo(&mut w, &mut book, pos.id, true, Fraction::ZERO).unwrap();
        assert_eq!(out.lender_received, d(100) + out.interest);
        assert_eq!(out.interest, Amount::from_minor(5));
        assert_eq!(w.equity(AgentId::issuer(0)).unwrap() - eq_i, out.interest);
        assert_eq!(w.equity(AgentId::dealer(0)).unwrap() - eq_d, -out.interest);
        assert!(book.is_empty());
    }

    #[test]
    fn second_leg_on_wrong_day() {
        let (mut w, mut book) = repo_world(d(1_000));
        let pos = open_reverse_repo(
            &mut w,
            &mut book,
            AgentId::issuer(0),
            AgentId::dealer(0),
            RepoTerms::overnight(d(10), DEFAULT_HAIRCUT, Fraction::ZERO),
        )
        .unwrap();
        assert_eq!(
            close_or_default_repo(&mut w, &mut book, pos.id, true, Fraction::ZERO),
            Err(InstrumentError::WrongDay { due: 1, today: 0 })
        );
    }

    #[test]
    fn default_losses() {
        let p = Amount::from_minor(100_000_00);
        assert_eq!(default_loss(p, DEFAULT_HAIRCUT, Fraction::from_bp(100)), Amount::ZERO);
        assert_eq!(default_loss(p, DEFAULT_HAIRCUT, Fraction::from_bp(500)), Amount::from_minor(3_000_00));
    }

    #[test]
    fn default_seizes_collateral() {
        let (mut w, mut book) = repo_world(d(1_000));
        let pos = open_reverse_repo(
            &mut w,
            &mut book,
            AgentId::issuer(0),
            AgentId::dealer(0),
            RepoTerms::overnight(d(100), DEFAULT_HAIRCUT, Fraction::ZERO),
        )
        .unwrap();
        w.advance_day();
        let out = close_or_default_repo(&mut w, &mut book, pos.id, false, Fraction::from_bp(100)).unwrap();
        assert_eq!(out.loss, Amount::ZERO);
        assert_eq!(out.lender_received, d(100));
        assert!(w.audit().passed());
    }

    #[test]
    fn roll_at_same_rate_and_higher_rate() {
        let (mut w, mut book) = repo_world(d(1_000));
        let rate = Fraction::from_bp(1);
        let pos = open_reverse_repo(
            &mut w,
            &mut book,
            AgentId::issuer(0),
            AgentId::dealer(0),
            RepoTerms::overnight(d(100), DEFAULT_HAIRCUT, rate),
        )
        .unwrap();
        let cash = w.cash(AgentId::issuer(0));
        w.advance_day();
        let rolled = roll_repo(&mut w, &mut book, pos.id, rate).unwrap();
        assert_eq!(w.cash(AgentId::issuer(0)), cash + pos.interest());
        assert_eq!(rolled.principal, d(100));

        // once the dealer has no cash, interest is capitalized
        let all = w.cash(AgentId::dealer(0));
        w.post_transfer(AgentId::dealer(0), AgentId::issuer(0), Instrument::Deposit, all).unwrap();
        w.advance_day();
        let higher = roll_repo(&mut w, &mut book, rolled.id, Fraction::from_bp(10)).unwrap();
        assert_eq!(higher.principal, d(100) + rolled.interest());
        assert_eq!(higher.interest(), higher.principal.scale(Fraction::from_bp(10)));
        assert!(w.audit().passed());
    }

    #[test]
    fn decline_to_roll_reports_gap() {
        let (mut w, mut book) = repo_world(d(1_000));
        let pos = open_reverse_repo(
            &mut w,
            &mut book,
            AgentId::issuer(0),
            AgentId::dealer(0),
            RepoTerms::overnight(d(100), DEFAULT_HAIRCUT, Fraction::ZERO),
        )
        .unwrap();
        w.advance_day();
        let gap = decline_roll(&w, &book, pos.id).unwrap();
        assert_eq!(gap.gap, d(100));
        assert_eq!(gap.borrower.kind, AgentKind::BrokerDealer);
    }

    #[test]
    fn marks_and_margin_calls() {
        let (mut w, mut book) = repo_world(d(1_000));
        let val = |w: &LedgerWorld| w.sheet(AgentId::dealer(0)).unwrap().total_assets(&w.marks);
        let before = val(&w);
        assert!(mark_treasuries(&mut w, &mut book, SecurityClass::LongOffTheRun, Fraction::ZERO).is_empty());
        assert_eq!(val(&w), before);

        let terms = RepoTerms { term_days: 7, ..RepoTerms::overnight(d(100), DEFAULT_HAIRCUT, Fraction::ZERO) };
        open_reverse_repo(&mut w, &mut book, AgentId::issuer(0), AgentId::dealer(0), terms).unwrap();
        let on = RepoTerms::overnight(d(100), DEFAULT_HAIRCUT, Fraction::ZERO);
        open_reverse_repo(&mut w, &mut book, AgentId::issuer(0), AgentId::dealer(0), on).unwrap();
        let calls = mark_treasuries(&mut w, &mut book, SecurityClass::LongOffTheRun, Fraction::from_bp(-300));
        assert_eq!(calls.len(), 1);
        assert!(w.audit().passed());
    }

    #[test]
    fn one_percent_tick_marks_down() {
        let (mut w, mut book) = repo_world(Amount::from_minor(100_000_00));
        mark_treasuries(&mut w, &mut book, SecurityClass::LongOffTheRun, Fraction::from_bp(-100));
        let v = w.sheet(AgentId::dealer(0)).unwrap().treasury_value(SecurityClass::LongOffTheRun, &w.marks);
        assert_eq!(v, Amount::from_minor(99_000_00));
    }
}
