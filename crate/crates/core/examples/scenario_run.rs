//! Load a preset, run it and write the four output files.
//!
//! `cargo run --example scenario_run -- march2020 /tmp/march`

use std::path::PathBuf;

use parsim::scenario::{presets, run};

fn main() {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "march2020".to_string());
    let dir = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join(format!("parsim-{name}")));

    let cfg = presets::load(&name).unwrap_or_else(|e| panic!("{e}"));
    let out = run(&cfg, None).unwrap_or_else(|e| panic!("{e}"));
    out.write_to(&dir).unwrap();

    let s = &out.summary;
    println!("{} over {} days, unit {}", s.name, s.horizon_days, s.unit);
    println!("peak deviation {}bp on day {:?}", s.peak_deviation_bp, s.peak_deviation_day);
    println!("requested {} filled {} delayed {}", s.requested, s.filled, s.delayed);
    println!("long paper low {:.6}, bill high {:.6}", s.min_long_price, s.max_bill_price);
    println!("dealer capacity {} .. {}", s.min_capacity, s.max_capacity);
    println!("{} events; outputs in {}", s.events, dir.display());
}
