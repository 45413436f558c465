//! Liquidity metrics of a backing portfolio and one step of its asset
//! progression.

use parsim::analytics::liquidity_metrics;
use parsim::instruments::{step_portfolio, PortfolioState, TreasuryBill};
use parsim::money::{Amount, Fraction};

fn bill(face: i64, maturity_day: u32, price_bp: i64) -> TreasuryBill {
    TreasuryBill {
        face: Amount::dollars(face),
        maturity_day,
        market_price: Fraction::from_bp(price_bp),
        on_the_run: false,
    }
}

fn main() {
    let portfolio = PortfolioState {
        treasuries: vec![bill(300, 3, 9_995), bill(400, 30, 9_980), bill(200, 90, 9_950)],
        deposits: Amount::dollars(100),
        r_t: Fraction::from_ppm(120),
        r_d: Fraction::from_ppm(50),
        repo: vec![],
    };
    let liq = liquidity_metrics(&portfolio, 0);
    println!("assets {}", portfolio.assets());
    println!("daily liquid {}  weekly liquid {}", liq.dla, liq.wla);
    println!("WAM {:.2} days  WAL {:.2} days", liq.wam_days.as_f64(), liq.wal_days.as_f64());

    // Prices fall 0.3% while 50 of deposits leave.
    let (next, terms) = step_portfolio(&portfolio, -Fraction::from_bp(30), -Amount::dollars(50));
    println!("treasury interest {}", terms.treasury_interest);
    println!("capital gain      {}", terms.capital_gain);
    println!("deposit interest  {}", terms.deposit_interest);
    println!("deposit change    {}", terms.deposit_change);
    println!("assets {} -> {}", portfolio.assets(), next.assets());
    assert_eq!(next.assets(), portfolio.assets() + terms.total());
}
