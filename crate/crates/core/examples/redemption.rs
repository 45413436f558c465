//! Redemptions under a surge: which funding route each request takes and
//! how long it waits for cash.

use std::collections::BTreeMap;

use parsim::events::EventKind;
use parsim::scenario::{presets, run};

fn main() {
    let cfg = presets::load("stablecoin_run").unwrap();
    let out = run(&cfg, None).unwrap();
    let units = out.units();

    let mut routes: BTreeMap<String, usize> = BTreeMap::new();
    for e in out.events.events() {
        match &e.kind {
            EventKind::RedemptionRequested { request, amount, funding, .. } => {
                *routes.entry(funding.clone()).or_default() += 1;
                if e.day <= 3 {
                    println!("day {:>2} request {request:>3}: {} via {funding}", e.day, units.format(*amount));
                }
            }
            EventKind::RedemptionDelayed { request, age_days, .. } if e.day <= 6 => {
                println!("day {:>2} request {request:>3} overdue after {age_days} days", e.day);
            }
            _ => {}
        }
    }
    println!("requests by route: {routes:?}");
    println!(
        "requested {}, paid {}, delayed {}, longest delay {} days",
        out.summary.requested, out.summary.filled, out.summary.delayed, out.summary.max_delay_days
    );
}
