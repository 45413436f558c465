//! Whole-system properties of redemption and mint flows, driven through
//! the scenario engine.

use proptest::prelude::*;

use parsim::events::EventKind;
use parsim::ledger::AgentId;
use parsim::money::{Amount, Fraction};
use parsim::scenario::config::{MintConfig, RedemptionConfig};
use parsim::scenario::{presets, run, Scenario, ScenarioConfig};

const ISSUER: AgentId = AgentId::issuer(0);

fn flows() -> impl Strategy<Value = Vec<(u32, bool, u32)>> {
    proptest::collection::vec((1u32..8, any::<bool>(), 1u32..300), 0..8)
}

fn with_flows(mut cfg: ScenarioConfig, flows: &[(u32, bool, u32)]) -> ScenarioConfig {
    for &(day, redeem, size) in flows {
        if redeem {
            cfg.redemptions.push(RedemptionConfig { day, issuer: ISSUER, share: size as f64 / 1_000.0 });
        } else {
            let buyer = AgentId::buyer(0);
            cfg.mints.push(MintConfig { day, issuer: ISSUER, buyer, amount: size as f64 / 20.0, bills_from: None });
        }
    }
    cfg.horizon_days = 10;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn coins_track_cumulative_mints_and_redemptions(flows in flows()) {
        let cfg = with_flows(presets::load("stablecoin_run").unwrap(), &flows);
        let mut sc = Scenario::new(cfg, None).unwrap();
        let initial = sc.sys.world.coins_outstanding(ISSUER);
        while !sc.is_done() {
            sc.step().unwrap();
            let d = &sc.sys.desks[&ISSUER];
            // Coins leave circulation when escrowed, so unpaid requests count as redeemed.
            prop_assert_eq!(sc.sys.world.coins_outstanding(ISSUER), initial + d.minted - d.retired - d.unpaid());
        }
    }

    #[test]
    fn deposit_funded_redemptions_never_fail(flows in flows()) {
        let cfg = with_flows(presets::load("slr_bottleneck").unwrap(), &flows);
        let out = run(&cfg, None).unwrap();
        let mut funding = std::collections::BTreeMap::new();
        for e in out.events.events() {
            match &e.kind {
                EventKind::RedemptionRequested { request, funding: f, .. } => {
                    funding.insert(*request, f.clone());
                }
                EventKind::LegFailed { request: Some(r), cause, .. } => {
                    prop_assert_ne!(funding.get(r).map(String::as_str), Some("from_deposits"));
                    prop_assert_eq!(cause.as_str(), "dealer_capacity");
                }
                _ => {}
            }
        }
    }

    #[test]
    fn rigorous_par_holds_with_unconstrained_dealers(flows in flows()) {
        let cfg = with_flows(presets::load("calm").unwrap(), &flows);
        let out = run(&cfg, None).unwrap();
        prop_assert!(out.agent_rows(ISSUER).all(|r| r.price == Some(Fraction::ONE)));
        prop_assert_eq!(out.totals.delayed, Amount::ZERO);
    }

    #[test]
    fn price_spirals_without_dealer_capacity(share in 10u32..200, cash in 5u32..60) {
        let mut cfg = ScenarioConfig::from_toml(include_str!("amplification.toml")).unwrap();
        cfg.redemptions[0].share = share as f64 / 1_000.0;
        cfg.intermediaries[0].cash = cash as f64;
        let out = run(&cfg, None).unwrap();
        prop_assert!(out.market.iter().all(|r| r.capacity.is_zero()));
        let prices: Vec<Fraction> = out.agent_rows(ISSUER).filter_map(|r| r.price).collect();
        prop_assert!(prices.windows(2).all(|w| w[1] <= w[0]), "{:?}", prices);
        prop_assert!(*prices.last().unwrap() < Fraction::ONE);
    }
}
