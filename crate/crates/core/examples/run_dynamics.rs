//! Holders switching into the run regime as the secondary price slips, and
//! staying there until par has held for the recovery window.

use parsim::dynamics::{redemption_demand, ConfidenceState, RunModel, Sensitivity, Transition};
use parsim::money::{Amount, Fraction};

fn main() {
    let mut model = RunModel::new(Fraction::from_bp(20), Fraction::from_bp(800), Fraction::from_bp(100)).unwrap();
    model.recovery_days = 3;
    model.transition = Transition::Ramp { width: Fraction::from_bp(50) };

    let prices_bp = [0, 20, 60, 90, 130, 80, 20, 0, 0, 0, 0, 0];
    let mut coins = Amount::dollars(1_000);
    println!("day  deviation  state        rate      demand");
    for (day, dev) in prices_bp.iter().enumerate() {
        let conf = ConfidenceState {
            secondary_price: Fraction::ONE - Fraction::from_bp(*dev),
            ..ConfidenceState::default()
        };
        let d = redemption_demand(&mut model, &conf, coins);
        let state = match model.state {
            Sensitivity::Insensitive => "insensitive",
            Sensitivity::Sensitive => "sensitive",
        };
        let flag = if d.flipped.is_some() { "  <- flip" } else { "" };
        println!("{day:>3}  {:>9}  {state:<11}  {}  {:>8}{flag}", conf.deviation(), d.rate, d.amount);
        coins -= d.amount;
    }
}
