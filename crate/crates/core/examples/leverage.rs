//! Issuer leverage bands and dealer SLR headroom.

use parsim::analytics::{classify_fdicia, leverage_ratio, slr};
use parsim::money::{Amount, Fraction};

fn main() {
    println!("issuer leverage (assets 100, varying coins):");
    for coins in [94_00, 95_50, 96_50, 97_50, 99_00] {
        let rep = leverage_ratio(Amount::from_minor(100_00), Amount::from_minor(coins)).unwrap();
        println!("  coins {:>6}: ratio {} -> {}", Amount::from_minor(coins), rep.ratio, rep.band.label());
    }

    println!("band edges:");
    for h in [199, 200, 299, 300, 399, 400, 499, 500] {
        println!("  {:>5.2}% -> {}", h as f64 / 100.0, classify_fdicia(Fraction::from_percent_hundredths(h)).label());
    }

    println!("dealer SLR (capital 6, exposures 10):");
    for assets in [80, 100, 110, 130] {
        for gsib in [false, true] {
            let r = slr(Amount::dollars(6), Amount::dollars(assets), Amount::dollars(10), gsib).unwrap();
            println!(
                "  assets {assets:>3} gsib {gsib:<5}: slr {} bound {} headroom {}",
                r.slr, r.lower_bound, r.headroom_assets
            );
        }
    }
}
