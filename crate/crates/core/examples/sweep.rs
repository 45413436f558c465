//! Sweep the SLR bound and the standing repo facility over the bottleneck
//! preset and print the result matrix.

use parsim::scenario::sweep::parse_grid;
use parsim::scenario::{presets, sweep};

fn main() {
    let base = presets::load("slr_bottleneck").unwrap();
    let grid = parse_grid("\"market.slr_bound_bp\" = [300, 400, 500]\n\"policy.srf\" = [false, true]\n").unwrap();
    let report = sweep(&base, &grid, None);
    print!("{}", report.matrix_csv().unwrap());
    println!("{} points, {} failed", report.points.len(), report.failures());
}
