//! Dealers absorbing Treasury sales up to their SLR headroom, with unfilled
//! flow marking prices down.

use parsim::ledger::{AgentId, Instrument, LedgerWorld, Op, SecurityClass};
use parsim::market::{self, DealerChain, DealerState, MarketParams};
use parsim::money::{Amount, Fraction};
use parsim::system::System;

fn main() {
    let seller = AgentId::buyer(0);
    let lender = AgentId::buyer(1);
    let mut w = LedgerWorld::new();
    w.add_bank(AgentId::bank(0));
    w.add_depositor(seller, AgentId::bank(0));
    w.add_depositor(lender, AgentId::bank(0));
    for i in 0..2 {
        w.add_depositor(AgentId::dealer(i), AgentId::bank(0));
    }
    let params = MarketParams { depth: Amount::dollars(100), ..MarketParams::default() };
    let mut sys = System::new(w, params, 1);
    sys.endow_treasury(seller, SecurityClass::LongOffTheRun, 3650, Amount::dollars(1_000)).unwrap();
    sys.endow_deposit(lender, Amount::dollars(10_000)).unwrap();
    sys.market.lenders.push(lender);
    // Each dealer: 100 of long paper on 6 of capital, the rest repo-funded,
    // and 25 of funding it can raise today.
    for i in 0..2 {
        let d = AgentId::dealer(i);
        sys.endow_treasury(d, SecurityClass::LongOffTheRun, 3650, Amount::dollars(100)).unwrap();
        sys.world
            .apply(&[Op::Issue { creditor: lender, debtor: d, instrument: Instrument::Repo, amount: Amount::dollars(94) }])
            .unwrap();
        let state = DealerState { exposures: Amount::ZERO, slr_bound: Fraction::from_bp(500), reserve_access: Amount::dollars(25) };
        sys.market.dealers.insert(d, state);
    }

    println!("capacity before sales: {}", market::capacity(&sys));
    for face in [10, 20, 40] {
        let r = market::submit_sale(&mut sys, seller, Amount::dollars(face), SecurityClass::LongOffTheRun);
        println!("sell {face}: filled {}, capacity left {}", r.filled_face, market::capacity(&sys));
    }
    market::clear_market(&mut sys);
    market::update_marks(&mut sys);
    println!("long price after unfilled flow: {}", sys.world.marks.long);

    let v = sys.market.submitted_volume;
    println!("submitted: seller {} interdealer {} buyer {} gross {}", v.seller, v.interdealer, v.buyer, v.gross);
    let chain = DealerChain::default().decompose(Amount::dollars(216));
    println!("216 sold through two dealers: retained {}, gross {}", chain.retention, chain.gross);
}
