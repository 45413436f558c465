//! The command-line tool: verbs, outputs and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn parsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parsim")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn presets_list_names_every_preset() {
    let o = parsim(&["presets", "list"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for name in parsim::scenario::presets::names() {
        assert!(text.contains(name), "{name} missing from {text}");
    }
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = parsim(&["run", "preset:calm", "--seed", "3", "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["daily.csv", "market.csv", "summary.json", "events.jsonl"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 3);
}

#[test]
fn run_from_a_file_matches_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("march.toml");
    std::fs::write(&cfg, parsim::scenario::presets::source("march2020").unwrap()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&parsim(&["run", path(&cfg), "--out", path(&a)])), 0);
    assert_eq!(code(&parsim(&["run", "march2020", "--out", path(&b)])), 0);
    for f in ["daily.csv", "summary.json", "events.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn validate_accepts_presets_and_rejects_bad_configs() {
    assert_eq!(code(&parsim(&["validate", "preset:stablecoin_run"])), 0);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let src = parsim::scenario::presets::source("calm").unwrap().replace("deposits = 40", "deposits = 41");
    std::fs::write(&bad, src).unwrap();
    let o = parsim(&["validate", path(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("allocations≠assets"));

    let garbled = dir.path().join("garbled.toml");
    std::fs::write(&garbled, "name = \"x\"\nhorizon_days = \"ten\"\n").unwrap();
    let o = parsim(&["validate", path(&garbled)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn io_failures_exit_with_three() {
    assert_eq!(code(&parsim(&["validate", "/no/such/scenario.toml"])), 3);
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = parsim(&["run", "preset:calm", "--out", path(&blocker.join("out"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn sweep_writes_a_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.toml");
    std::fs::write(&grid, "\"policy.srf\" = [false, true]\n").unwrap();
    let out = dir.path().join("sweep");
    let o = parsim(&["sweep", "preset:slr_bottleneck", "--grid", path(&grid), "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(out.join("point-000/summary.json").is_file());
    assert!(out.join("point-001/summary.json").is_file());
    // Identical delayed totals with and without the facility.
    let col = rows[0].split(',').position(|c| c == "delayed").unwrap();
    let delayed: Vec<&str> = rows[1..].iter().map(|r| r.split(',').nth(col).unwrap()).collect();
    assert_eq!(delayed[0], delayed[1]);
}

#[test]
fn unknown_preset_is_a_validation_error() {
    assert_eq!(code(&parsim(&["run", "preset:nope"])), 1);
}
