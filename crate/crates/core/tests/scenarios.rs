//! Scenario loading, golden runs and sweeps.

use parsim::ledger::AgentId;
use parsim::money::{Amount, Fraction};
use parsim::scenario::sweep::{parse_grid, point_config};
use parsim::scenario::{presets, run, sweep, Grid, ScenarioConfig, ScenarioError};

const ISSUER: AgentId = AgentId::issuer(0);

fn preset(name: &str) -> ScenarioConfig {
    presets::load(name).unwrap()
}

#[test]
fn every_preset_runs_and_passes_its_audits() {
    for name in presets::names() {
        let out = run(&preset(name), None).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(out.summary.name, name);
        let days = out.config.horizon_days as usize;
        let agents = out.config.dealers.len() + out.config.issuers.len();
        assert_eq!(out.daily.len(), days * agents, "{name}");
        assert_eq!(out.market.len(), days * 2, "{name}");
    }
}

#[test]
fn calm_stays_at_par() {
    let out = run(&preset("calm"), None).unwrap();
    assert!(out.agent_rows(ISSUER).all(|r| r.price == Some(Fraction::ONE)));
    assert_eq!(out.totals.delayed, Amount::ZERO);
    assert_eq!(out.summary.peak_deviation_bp, 0.0);
    assert_eq!(out.summary.max_delay_days, 0);
    assert!(out.summary.regime_flips.is_empty());
    assert!(out.totals.requested.is_positive());
}

#[test]
fn two_thirds_surge_breaks_the_threshold() {
    let cfg = preset("stablecoin_run");
    let out = run(&cfg, None).unwrap();
    let s = &out.summary;
    assert!(out.totals.delayed.is_positive());
    assert!(s.peak_deviation_bp > cfg.run.threshold_bp);
    // Values fixed at the first verified run.
    assert_eq!(s.peak_deviation_bp, 1255.14);
    assert_eq!(out.units().format(out.totals.delayed), "31.74");
    assert_eq!(s.max_delay_days, 4);
}

#[test]
fn rows_are_ordered_by_day_then_agent() {
    let out = run(&preset("stablecoin_run"), None).unwrap();
    assert!(out.daily.windows(2).all(|w| (w[0].day, w[0].agent) < (w[1].day, w[1].agent)));
    assert!(out.market.windows(2).all(|w| (w[0].day, w[0].class) < (w[1].day, w[1].class)));
}

#[test]
fn seed_override_is_recorded() {
    let out = run(&preset("calm"), Some(99)).unwrap();
    assert_eq!(out.summary.seed, 99);
}

#[test]
fn written_files_match_the_in_memory_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&preset("march2020"), None).unwrap();
    out.write_to(dir.path()).unwrap();
    let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();
    assert_eq!(read("daily.csv"), out.daily_csv().unwrap());
    assert_eq!(read("market.csv"), out.market_csv().unwrap());
    assert_eq!(read("summary.json"), out.summary_json());
    assert_eq!(read("events.jsonl"), out.events_jsonl());
    let summary: serde_json::Value = serde_json::from_str(&read("summary.json")).unwrap();
    assert_eq!(summary["name"], "march2020");
    for line in read("events.jsonl").lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["day"].is_u64() && v["type"].is_string());
    }
    let header = read("daily.csv").lines().next().unwrap().to_string();
    assert!(header.starts_with("day,agent,kind,equity,leverage,band"));
}

#[test]
fn sweep_over_the_slr_bound_is_monotone() {
    let grid = parse_grid("\"market.slr_bound_bp\" = [300, 500]\n").unwrap();
    let report = sweep(&preset("slr_bottleneck"), &grid, None);
    assert_eq!(report.failures(), 0);
    let loose = report.points[0].result.as_ref().unwrap();
    let tight = report.points[1].result.as_ref().unwrap();
    assert!(loose.max_capacity > tight.max_capacity);
    assert!(loose.min_capacity > tight.min_capacity);
    assert!(loose.summary.peak_deviation_bp < tight.summary.peak_deviation_bp);
    assert!(loose.totals.delayed <= tight.totals.delayed);
    let csv = report.matrix_csv().unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().next().unwrap().contains("market.slr_bound_bp"));
}

#[test]
fn srf_sweep_at_a_binding_bound_leaves_delays_unchanged() {
    let grid = parse_grid("\"policy.srf\" = [false, true]\n").unwrap();
    let report = sweep(&preset("slr_bottleneck"), &grid, None);
    let off = report.points[0].result.as_ref().unwrap();
    let on = report.points[1].result.as_ref().unwrap();
    assert!(off.totals.delayed.is_positive());
    assert!((off.totals.delayed - on.totals.delayed).abs() <= Amount::from_minor(1));
}

#[test]
fn empty_grid_is_a_single_baseline_run() {
    let cfg = preset("regime_shift");
    let report = sweep(&cfg, &Grid::new(), None);
    assert_eq!(report.points.len(), 1);
    let point = report.points[0].result.as_ref().unwrap();
    let alone = run(&cfg, None).unwrap();
    assert_eq!(point.daily_csv().unwrap(), alone.daily_csv().unwrap());
}

#[test]
fn sweep_points_equal_standalone_runs() {
    let grid = parse_grid("\"market.depth\" = [50, 200]\n\"run.threshold_bp\" = [200, 400]\n").unwrap();
    let base = preset("stablecoin_run");
    let report = sweep(&base, &grid, Some(4));
    assert_eq!(report.points.len(), 4);
    for p in &report.points {
        let cfg = point_config(&base, &p.assignment).unwrap();
        let alone = run(&cfg, Some(4)).unwrap();
        let got = p.result.as_ref().unwrap();
        assert_eq!(got.daily_csv().unwrap(), alone.daily_csv().unwrap());
        assert_eq!(got.events_jsonl(), alone.events_jsonl());
    }
}

#[test]
fn failing_points_do_not_abort_the_sweep() {
    let grid = parse_grid("\"issuers.0.assets\" = [100, 99]\n").unwrap();
    let report = sweep(&preset("calm"), &grid, None);
    assert_eq!(report.points.len(), 2);
    assert!(report.points[0].result.is_ok());
    assert!(matches!(report.points[1].result, Err(ScenarioError::Validation(_))));
    assert_eq!(report.failures(), 1);
    let dir = tempfile::tempdir().unwrap();
    report.write_to(dir.path()).unwrap();
    assert!(dir.path().join("point-000/daily.csv").exists());
    assert!(!dir.path().join("point-001").exists());
    assert!(std::fs::read_to_string(dir.path().join("failures.txt")).unwrap().contains("point-001"));
}

#[test]
fn unknown_grid_keys_fail_their_point() {
    let grid = parse_grid("\"market.no_such_field\" = [1]\n").unwrap();
    let report = sweep(&preset("calm"), &grid, None);
    assert!(matches!(report.points[0].result, Err(ScenarioError::Parse { .. }) | Err(ScenarioError::Validation(_))));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let parse = ScenarioConfig::from_toml("horizon_days = \"x\"\n").unwrap_err();
    assert_eq!(parse.exit_code(), 1);
    assert_eq!(ScenarioError::Validation("x".into()).exit_code(), 1);
    assert_eq!(ScenarioError::AuditFailure { day: 1, report: String::new() }.exit_code(), 2);
    assert_eq!(ScenarioError::Io("x".into()).exit_code(), 3);
}

#[test]
fn a_broken_ledger_stops_the_run() {
    use parsim::ledger::{Instrument, PositionKey, Side};
    let mut sc = parsim::scenario::Scenario::new(preset("calm"), None).unwrap();
    sc.step().unwrap();
    sc.sys.world.sheet_mut_unchecked(ISSUER).unwrap().adjust(
        Side::Asset,
        PositionKey::claim(Instrument::Deposit, AgentId::bank(0)),
        Amount::from_minor(1),
    );
    match sc.step() {
        Err(e @ ScenarioError::AuditFailure { day: 2, .. }) => assert_eq!(e.exit_code(), 2),
        other => panic!("expected an audit failure, got {other:?}"),
    }
    assert!(sc.sys.events.events().iter().any(|e| matches!(e.kind, parsim::events::EventKind::AuditFailed { .. })));
}
