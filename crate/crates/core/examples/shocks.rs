//! Technical shocks: resolving each class against a set of deployments, then
//! an erroneous mint-and-burn run end to end.

use parsim::dynamics::{resolve_shock, LikelihoodBand, ShockClass, ShockSpec, SystemicBand};
use parsim::events::EventKind;
use parsim::ledger::AgentId;
use parsim::money::{Amount, Fraction};
use parsim::scenario::{presets, run};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let (a, b) = (AgentId::issuer(0), AgentId::issuer(1));
    let chains = vec![(a, vec!["eth".to_string(), "sol".to_string()]), (b, vec!["eth".to_string()])];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for class in [ShockClass::LivenessFault, ShockClass::CorrelatedLiveness, ShockClass::UncontrolledSupply, ShockClass::ConfidenceOnly]
    {
        let spec = ShockSpec {
            class,
            likelihood: LikelihoodBand::Moderate,
            systemic: SystemicBand::Medium,
            magnitude: (class == ShockClass::UncontrolledSupply).then(|| Fraction::from_bp(5_000)),
            confidence: Some(Fraction::from_bp(50)),
            duration: 2,
            chain: "eth".to_string(),
            issuer: Some(a),
            recipient: Some(AgentId::holder(0)),
            day: 4,
        };
        let e = resolve_shock(&spec, &chains, |_| Amount::dollars(1_000), &mut rng);
        println!(
            "{class:<20} issuers {:?} until day {} blocks {} price effect {} mint {:?}",
            e.issuers.iter().map(|i| i.to_string()).collect::<Vec<_>>(),
            e.until,
            e.blocks_chain,
            e.price_effect,
            e.mint.map(|(_, m)| m.to_string())
        );
    }

    let out = run(&presets::load("paxos_mint_error").unwrap(), None).unwrap();
    let issuer = AgentId::issuer(0);
    for e in out.events.events() {
        if matches!(e.kind, EventKind::ShockStarted { .. } | EventKind::SupplyMinted { .. } | EventKind::SupplyBurned { .. } | EventKind::ShockEnded { .. }) {
            println!("day {:>2}: {}", e.day, serde_json::to_string(&e.kind).unwrap());
        }
    }
    for r in out.agent_rows(issuer) {
        println!("day {:>2} price {}", r.day, r.price.unwrap());
    }
}
