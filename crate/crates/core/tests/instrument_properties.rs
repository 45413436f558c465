//! Properties of repos, bills and the asset-progression step.

use proptest::prelude::*;

use parsim::instruments::{
    check_genius, close_or_default_repo, default_loss, open_reverse_repo, required_collateral, step_portfolio,
    PortfolioState, RepoBook, RepoTerms, TreasuryBill, GENIUS_MAX_BILL_DAYS,
};
use parsim::ledger::{AgentId, Instrument, LedgerWorld, Op, SecurityClass};
use parsim::money::{Amount, Fraction};

const LENDER: AgentId = AgentId::issuer(0);
const BORROWER: AgentId = AgentId::dealer(0);

fn world(cash: Amount, bills: Amount, longs: Amount) -> LedgerWorld {
    let mut w = LedgerWorld::new();
    w.add_bank(AgentId::bank(0));
    w.add_bank(AgentId::bank(1));
    w.add_depositor(LENDER, AgentId::bank(0));
    w.add_depositor(BORROWER, AgentId::bank(1));
    let mut ops = Vec::new();
    for (who, amount) in [(LENDER, cash), (BORROWER, cash)] {
        let bank = w.bank_of(who).unwrap();
        ops.push(Op::Issue { creditor: bank, debtor: AgentId::FED, instrument: Instrument::Reserves, amount });
        ops.push(Op::Issue { creditor: who, debtor: bank, instrument: Instrument::Deposit, amount });
    }
    ops.push(Op::Endow { agent: BORROWER, class: SecurityClass::Bill, maturity: 60, face: bills });
    ops.push(Op::Endow { agent: BORROWER, class: SecurityClass::LongOffTheRun, maturity: 3650, face: longs });
    w.apply(&ops).unwrap();
    w
}

fn bill(face: i64, maturity_day: u32, price_ppm: i64) -> TreasuryBill {
    TreasuryBill { face: Amount::from_minor(face), maturity_day, market_price: Fraction::from_ppm(price_ppm), on_the_run: false }
}

proptest! {
    #[test]
    fn losses_vanish_inside_the_haircut(p in 0i64..i64::MAX / 2_000_000, h in 0i64..500_000, d in 0i64..500_000) {
        let loss = default_loss(Amount::from_minor(p), Fraction::from_ppm(h), Fraction::from_ppm(d));
        if d <= h {
            prop_assert_eq!(loss, Amount::ZERO);
        } else {
            prop_assert!(loss >= Amount::ZERO && loss <= Amount::from_minor(p));
        }
    }

    #[test]
    fn performing_repo_moves_equity_by_interest_only(
        principal in 1i64..10_000_00,
        haircut_bp in 0i64..1_000,
        rate_ppm in 0i64..2_000,
        long_share in 0i64..=1_000_000,
    ) {
        let mut w = world(Amount::from_minor(20_000_00), Amount::from_minor(15_000_00), Amount::from_minor(15_000_00));
        let mut book = RepoBook::default();
        let (el, eb) = (w.equity(LENDER).unwrap(), w.equity(BORROWER).unwrap());
        let terms = RepoTerms {
            principal: Amount::from_minor(principal),
            haircut: Fraction::from_bp(haircut_bp),
            term_days: 1,
            rate: Fraction::from_ppm(rate_ppm),
            long_share: Fraction::from_ppm(long_share),
        };
        let pos = open_reverse_repo(&mut w, &mut book, LENDER, BORROWER, terms).unwrap();
        prop_assert!(pos.collateral_value >= required_collateral(terms.principal, terms.haircut));
        prop_assert_eq!(w.equity(LENDER).unwrap(), el);
        prop_assert_eq!(w.equity(BORROWER).unwrap(), eb);
        w.advance_day();
        let out = close_or_default_repo(&mut w, &mut book, pos.id, true, Fraction::ZERO).unwrap();
        prop_assert_eq!(w.equity(LENDER).unwrap() - el, out.interest);
        prop_assert_eq!(w.equity(BORROWER).unwrap() - eb, -out.interest);
        prop_assert!(w.audit().passed());
        prop_assert!(book.is_empty());
    }

    #[test]
    fn genius_limit_is_a_maturity_cutoff(days in 0u32..400, today in 0u32..100, compliant: bool) {
        let b = bill(100, today + days, 1_000_000);
        let ok = check_genius(&[b], today, compliant).is_ok();
        prop_assert_eq!(ok, !compliant || days <= GENIUS_MAX_BILL_DAYS);
    }

    #[test]
    fn deposit_flows_are_additive(
        faces in proptest::collection::vec((0i64..1_000_000_00, 900_000i64..1_100_000), 0..5),
        deposits in 0i64..1_000_000_00,
        dt in -20_000i64..20_000,
        a in -1_000_00i64..1_000_00,
        b in -1_000_00i64..1_000_00,
    ) {
        let p = PortfolioState {
            treasuries: faces.iter().map(|(f, px)| bill(*f, 30, *px)).collect(),
            deposits: Amount::from_minor(deposits),
            r_t: Fraction::ZERO,
            r_d: Fraction::ZERO,
            repo: vec![],
        };
        let (once, _) = step_portfolio(&p, Fraction::from_ppm(dt), Amount::from_minor(a + b));
        let (first, _) = step_portfolio(&p, Fraction::from_ppm(dt), Amount::from_minor(a));
        let (twice, t2) = step_portfolio(&first, Fraction::ZERO, Amount::from_minor(b));
        prop_assert_eq!(once.assets(), twice.assets());
        prop_assert_eq!(t2.capital_gain, Amount::ZERO);
    }

    #[test]
    fn step_identity(
        faces in proptest::collection::vec((0i64..1_000_000_00, 900_000i64..1_100_000), 0..5),
        deposits in 0i64..1_000_000_00,
        r_t in 0i64..1_000,
        r_d in 0i64..1_000,
        dt in -20_000i64..20_000,
        dd in -1_000_00i64..1_000_00,
    ) {
        let p = PortfolioState {
            treasuries: faces.iter().map(|(f, px)| bill(*f, 30, *px)).collect(),
            deposits: Amount::from_minor(deposits),
            r_t: Fraction::from_ppm(r_t),
            r_d: Fraction::from_ppm(r_d),
            repo: vec![],
        };
        let (n, t) = step_portfolio(&p, Fraction::from_ppm(dt), Amount::from_minor(dd));
        prop_assert_eq!(n.assets(), p.assets() + t.total());
        prop_assert_eq!(t.treasury_interest, p.t().scale(p.r_t));
        prop_assert_eq!(t.deposit_interest, p.deposits.scale(p.r_d));
        if dt >= 0 {
            prop_assert!(t.capital_gain >= Amount::ZERO);
        } else {
            prop_assert!(t.capital_gain <= Amount::ZERO);
        }
    }
}
