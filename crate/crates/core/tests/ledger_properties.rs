//! Ledger invariants under random operation sequences.

use proptest::prelude::*;

use parsim::ledger::{AgentId, Instrument, LedgerWorld, Op, SecurityClass};
use parsim::money::Amount;
use parsim::system::System;
use parsim::market::MarketParams;

const BANKS: [AgentId; 2] = [AgentId::bank(0), AgentId::bank(1)];
const ISSUER: AgentId = AgentId::issuer(0);
const PEOPLE: [AgentId; 4] = [AgentId::holder(0), AgentId::holder(1), AgentId::buyer(0), AgentId::dealer(0)];

fn system() -> System {
    let mut w = LedgerWorld::new();
    for b in BANKS {
        w.add_bank(b);
    }
    w.add_depositor(ISSUER, BANKS[0]);
    for (n, p) in PEOPLE.iter().enumerate() {
        w.add_depositor(*p, BANKS[n % 2]);
    }
    let mut sys = System::new(w, MarketParams::default(), 7);
    for p in PEOPLE {
        sys.endow_deposit(p, Amount::from_minor(1_000_00)).unwrap();
        sys.endow_treasury(p, SecurityClass::Bill, 30, Amount::from_minor(500_00)).unwrap();
    }
    sys.endow_deposit(ISSUER, Amount::from_minor(1_000_00)).unwrap();
    sys.endow_coins(PEOPLE[0], ISSUER, Amount::from_minor(1_000_00)).unwrap();
    sys
}

#[derive(Clone, Debug)]
enum Action {
    Pay(usize, usize, i64),
    Bills(usize, usize, i64),
    Coins(usize, usize, i64),
    Mint(usize, i64),
    Redeem(usize, i64),
}

fn action() -> impl Strategy<Value = Action> {
    let who = 0..PEOPLE.len();
    let amt = 0i64..1_500_00;
    prop_oneof![
        (who.clone(), who.clone(), amt.clone()).prop_map(|(a, b, x)| Action::Pay(a, b, x)),
        (who.clone(), who.clone(), amt.clone()).prop_map(|(a, b, x)| Action::Bills(a, b, x)),
        (who.clone(), who.clone(), amt.clone()).prop_map(|(a, b, x)| Action::Coins(a, b, x)),
        (who.clone(), amt.clone()).prop_map(|(a, x)| Action::Mint(a, x)),
        (who, amt).prop_map(|(a, x)| Action::Redeem(a, x)),
    ]
}

fn ops(a: &Action) -> Vec<Op> {
    let coin = Instrument::Stablecoin { issuer: ISSUER };
    match *a {
        Action::Pay(f, t, x) => vec![Op::Pay { from: PEOPLE[f], to: PEOPLE[t], amount: Amount::from_minor(x) }],
        Action::Bills(f, t, x) => vec![Op::Transfer {
            from: PEOPLE[f],
            to: PEOPLE[t],
            instrument: Instrument::Treasury { class: SecurityClass::Bill, maturity: 30 },
            amount: Amount::from_minor(x),
        }],
        Action::Coins(f, t, x) => {
            vec![Op::Transfer { from: PEOPLE[f], to: PEOPLE[t], instrument: coin, amount: Amount::from_minor(x) }]
        }
        Action::Mint(b, x) => vec![
            Op::Pay { from: PEOPLE[b], to: ISSUER, amount: Amount::from_minor(x) },
            Op::Issue { creditor: PEOPLE[b], debtor: ISSUER, instrument: coin, amount: Amount::from_minor(x) },
        ],
        Action::Redeem(h, x) => vec![
            Op::Extinguish { creditor: PEOPLE[h], debtor: ISSUER, instrument: coin, amount: Amount::from_minor(x) },
            Op::Pay { from: ISSUER, to: PEOPLE[h], amount: Amount::from_minor(x) },
        ],
    }
}

proptest! {
    #[test]
    fn invariants_hold_after_every_batch(actions in proptest::collection::vec(action(), 1..40)) {
        let mut sys = system();
        let deposits = sys.world.total_bank_deposits();
        let world = &mut sys.world;
        for a in &actions {
            let before = world.clone();
            let before_json = before.snapshot().to_json();
            match world.apply(&ops(a)) {
                Ok(()) => {}
                Err(_) => {
                    prop_assert_eq!(&*world, &before);
                    prop_assert_eq!(world.snapshot().to_json(), before_json);
                }
            }
            prop_assert!(world.audit().passed(), "{}", world.audit());
            prop_assert_eq!(world.total_bank_reserves(), world.fed_reserve_liabilities());
            for id in world.agent_ids().collect::<Vec<_>>() {
                let sheet = world.sheet(id).unwrap();
                prop_assert_eq!(sheet.equity(&world.marks), sheet.total_assets(&world.marks) - sheet.total_liabilities());
            }
            // Payments, coin flows, mints and redemptions only move deposits.
            prop_assert_eq!(world.total_bank_deposits(), deposits);
        }
    }

    #[test]
    fn scheduled_batches_settle_on_their_day(x in 1i64..1_000_00, due in 1u32..5) {
        let mut sys = system();
        let w = &mut sys.world;
        w.schedule(parsim::ledger::ScheduledBatch {
            due,
            tag: 1,
            ops: vec![Op::Pay { from: PEOPLE[0], to: PEOPLE[1], amount: Amount::from_minor(x) }],
        });
        let start = w.deposits(PEOPLE[1]);
        for day in 1..=due {
            w.advance_day();
            let batches = w.take_due(day);
            prop_assert_eq!(batches.len(), usize::from(day == due));
            for b in batches {
                w.apply(&b.ops).unwrap();
            }
        }
        prop_assert_eq!(w.deposits(PEOPLE[1]) - start, Amount::from_minor(x));
    }
}
