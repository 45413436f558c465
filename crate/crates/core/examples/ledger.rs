//! Double-entry basics: endow agents, move deposits, mint and redeem coins,
//! and watch a batch that would overdraw roll back untouched.

use parsim::ledger::{AgentId, Instrument, LedgerWorld, Op};
use parsim::market::MarketParams;
use parsim::money::Amount;
use parsim::system::System;

fn main() {
    let (bank_a, bank_b) = (AgentId::bank(0), AgentId::bank(1));
    let issuer = AgentId::issuer(0);
    let alice = AgentId::holder(0);

    let mut w = LedgerWorld::new();
    w.add_bank(bank_a);
    w.add_bank(bank_b);
    w.add_depositor(issuer, bank_a);
    w.add_depositor(alice, bank_b);
    let mut sys = System::new(w, MarketParams::default(), 1);
    sys.endow_deposit(alice, Amount::dollars(500)).unwrap();
    sys.endow_deposit(issuer, Amount::dollars(100)).unwrap();

    let coin = Instrument::Stablecoin { issuer };
    let x = Amount::dollars(200);
    let world = &mut sys.world;
    let deposits = world.total_bank_deposits();

    // Mint: Alice pays the issuer and receives coins, in one atomic batch.
    world
        .apply(&[
            Op::Pay { from: alice, to: issuer, amount: x },
            Op::Issue { creditor: alice, debtor: issuer, instrument: coin, amount: x },
        ])
        .unwrap();
    println!("after mint: alice deposits {}, coins outstanding {}", world.deposits(alice), world.coins_outstanding(issuer));
    println!("reserves: {bank_a} {}, {bank_b} {}", world.reserves(bank_a), world.reserves(bank_b));

    // Redeem more than the issuer holds: the whole batch is refused.
    let before = world.clone();
    let err = world
        .apply(&[
            Op::Extinguish { creditor: alice, debtor: issuer, instrument: coin, amount: x },
            Op::Pay { from: issuer, to: alice, amount: Amount::dollars(1_000) },
        ])
        .unwrap_err();
    println!("rejected: {err}");
    assert_eq!(*world, before);

    // A proper redemption at par.
    world
        .apply(&[
            Op::Extinguish { creditor: alice, debtor: issuer, instrument: coin, amount: x },
            Op::Pay { from: issuer, to: alice, amount: x },
        ])
        .unwrap();
    println!("after redemption: coins outstanding {}", world.coins_outstanding(issuer));
    assert_eq!(world.total_bank_deposits(), deposits);

    let audit = world.audit();
    println!("audit passed: {}", audit.passed());
    println!("{}", world.snapshot().to_json());
}
