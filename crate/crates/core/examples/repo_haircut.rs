//! Reverse repo lifecycle: collateral pledged at a haircut, then a
//! counterparty default after the collateral has lost value.

use parsim::instruments::{close_or_default_repo, default_loss, open_reverse_repo, set_mark, RepoBook, RepoTerms};
use parsim::ledger::{AgentId, LedgerWorld, SecurityClass};
use parsim::market::MarketParams;
use parsim::money::{Amount, Fraction};
use parsim::system::System;

fn main() {
    println!("loss on 100 lent, by haircut and decline:");
    for h in [0, 200, 500] {
        let row: Vec<String> = [100, 200, 500, 1_000]
            .iter()
            .map(|d| default_loss(Amount::dollars(100), Fraction::from_bp(h), Fraction::from_bp(*d)).to_string())
            .collect();
        println!("  haircut {:>3}bp: {}", h, row.join("  "));
    }

    let lender = AgentId::issuer(0);
    let borrower = AgentId::dealer(0);
    let mut w = LedgerWorld::new();
    w.add_bank(AgentId::bank(0));
    w.add_depositor(lender, AgentId::bank(0));
    w.add_depositor(borrower, AgentId::bank(0));
    let mut sys = System::new(w, MarketParams::default(), 1);
    sys.endow_deposit(lender, Amount::dollars(1_000)).unwrap();
    sys.endow_treasury(borrower, SecurityClass::LongOffTheRun, 3650, Amount::dollars(800)).unwrap();
    sys.endow_treasury(borrower, SecurityClass::Bill, 60, Amount::dollars(200)).unwrap();

    let mut book = RepoBook::default();
    let terms = RepoTerms::overnight(Amount::dollars(500), Fraction::from_bp(200), Fraction::from_ppm(100));
    let pos = open_reverse_repo(&mut sys.world, &mut book, lender, borrower, terms).unwrap();
    println!("repo {} opened: principal {}, collateral {}", pos.id, pos.principal, pos.collateral_value);

    // Long paper falls 5% overnight and the borrower fails to repay.
    let calls = set_mark(&mut sys.world, &mut book, SecurityClass::LongOffTheRun, Fraction::from_bp(9_500));
    println!("margin calls: {}", calls.len());
    sys.world.advance_day();
    let out = close_or_default_repo(&mut sys.world, &mut book, pos.id, false, Fraction::from_bp(500)).unwrap();
    println!("default: lender received {} of collateral, loss {}", out.lender_received, out.loss);
    println!("audit passed: {}", sys.world.audit().passed());
}
