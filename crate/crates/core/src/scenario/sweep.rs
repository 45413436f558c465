//! Parameter sweeps over a base scenario.
//!
//! A grid file maps dotted configuration paths to lists of values:
//!
//! ```toml
//! "market.slr_bound_bp" = [300, 500]
//! "policy.srf" = [false, true]
//! "dealers.0.capital" = [4.0, 6.0]
//! ```
//!
//! Every combination becomes one grid point, run independently of the
//! others. Keys are applied in sorted order and the configuration schema
//! decides which paths exist, so a misspelled key fails that point.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::config::ScenarioConfig;
use super::output::RunOutput;
use super::{engine, ScenarioError};

/// Sorted parameter paths with their candidate values.
pub type Grid = BTreeMap<String, Vec<toml::Value>>;

pub fn parse_grid(src: &str) -> Result<Grid, ScenarioError> {
    let table: toml::Table = toml::from_str(src).map_err(|e| ScenarioError::Parse {
        line: 0,
        column: 0,
        field: "grid".into(),
        message: e.message().to_string(),
    })?;
    let mut grid = Grid::new();
    for (key, v) in table {
        let toml::Value::Array(values) = v else {
            return Err(ScenarioError::Validation(format!("grid key `{key}` must map to a list of values")));
        };
        if values.is_empty() {
            return Err(ScenarioError::Validation(format!("grid key `{key}` has no values")));
        }
        if let Some(bad) = values.iter().find(|v| matches!(v, toml::Value::Array(_) | toml::Value::Table(_))) {
            return Err(ScenarioError::Validation(format!("grid key `{key}`: `{bad}` is not a scalar")));
        }
        grid.insert(key, values);
    }
    Ok(grid)
}

pub fn load_grid(path: &Path) -> Result<Grid, ScenarioError> {
    let src = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
    parse_grid(&src)
}

/// Set a dotted path inside a TOML document. Numeric segments index arrays.
pub fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), ScenarioError> {
    let missing = || ScenarioError::Validation(format!("grid key `{path}` does not name a configuration field"));
    let parts: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for (n, part) in parts.iter().enumerate() {
        let last = n + 1 == parts.len();
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert((*part).to_string(), value);
                    return Ok(());
                }
                t.entry((*part).to_string()).or_insert_with(|| toml::Value::Table(Default::default()))
            }
            toml::Value::Array(a) => {
                let i: usize = part.parse().map_err(|_| missing())?;
                let slot = a.get_mut(i).ok_or_else(missing)?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(missing()),
        };
    }
    Err(missing())
}

/// Every combination of grid values, keys in sorted order.
pub fn points(grid: &Grid) -> Vec<Vec<(String, toml::Value)>> {
    let mut out: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for (key, values) in grid {
        out = out
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    out
}

/// The configuration for one grid point.
pub fn point_config(base: &ScenarioConfig, assignment: &[(String, toml::Value)]) -> Result<ScenarioConfig, ScenarioError> {
    let mut doc = toml::Value::try_from(base).map_err(|e| ScenarioError::Validation(e.to_string()))?;
    for (k, v) in assignment {
        set_path(&mut doc, k, v.clone())?;
    }
    ScenarioConfig::from_value(doc)
}

#[derive(Debug)]
pub struct SweepPoint {
    pub index: usize,
    pub assignment: Vec<(String, toml::Value)>,
    pub result: Result<RunOutput, ScenarioError>,
}

#[derive(Debug)]
pub struct SweepReport {
    pub keys: Vec<String>,
    pub points: Vec<SweepPoint>,
}

/// Run every grid point. Points run in parallel and come back in grid
/// order; a failing point records its error and the others carry on.
pub fn sweep(base: &ScenarioConfig, grid: &Grid, seed: Option<u64>) -> SweepReport {
    let assignments = points(grid);
    let points = assignments
        .into_par_iter()
        .enumerate()
        .map(|(index, assignment)| {
            let result = point_config(base, &assignment).and_then(|cfg| engine::run(&cfg, seed));
            SweepPoint { index, assignment, result }
        })
        .collect();
    SweepReport { keys: grid.keys().cloned().collect(), points }
}

fn scalar(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl SweepReport {
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.result.is_err()).count()
    }

    /// One row per grid point with its assignment and summary metrics.
    pub fn matrix_csv(&self) -> Result<String, ScenarioError> {
        let io = |e: csv::Error| ScenarioError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["point".to_string()];
        header.extend(self.keys.iter().cloned());
        header.extend(
            [
                "status",
                "peak_deviation_bp",
                "max_delay_days",
                "requested",
                "filled",
                "delayed",
                "srf_draws",
                "min_capacity",
                "max_capacity",
                "min_long_price",
                "insolvency_day",
                "error",
            ]
            .map(String::from),
        );
        w.write_record(&header).map_err(io)?;
        for p in &self.points {
            let mut row = vec![format!("{:03}", p.index)];
            row.extend(p.assignment.iter().map(|(_, v)| scalar(v)));
            match &p.result {
                Ok(out) => {
                    let s = &out.summary;
                    let u = out.units();
                    row.extend([
                        "ok".to_string(),
                        format!("{}", s.peak_deviation_bp),
                        s.max_delay_days.to_string(),
                        u.format(out.totals.requested),
                        u.format(out.totals.filled),
                        u.format(out.totals.delayed),
                        u.format(out.totals.srf_draws),
                        u.format(out.min_capacity),
                        u.format(out.max_capacity),
                        format!("{}", s.min_long_price),
                        s.insolvency_day.map(|d| d.to_string()).unwrap_or_default(),
                        String::new(),
                    ]);
                }
                Err(e) => {
                    row.push(format!("exit_{}", e.exit_code()));
                    row.extend(std::iter::repeat_n(String::new(), 10));
                    row.push(e.to_string());
                }
            }
            w.write_record(&row).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| ScenarioError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Write `point-NNN/` output directories and `sweep.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), ScenarioError> {
        std::fs::create_dir_all(dir).map_err(|e| ScenarioError::Io(format!("{}: {e}", dir.display())))?;
        let mut listing = String::new();
        for p in &self.points {
            let sub = dir.join(format!("point-{:03}", p.index));
            match &p.result {
                Ok(out) => out.write_to(&sub)?,
                Err(e) => {
                    let _ = writeln!(listing, "point-{:03}: {e}", p.index);
                }
            }
        }
        std::fs::write(dir.join("sweep.csv"), self.matrix_csv()?)
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", dir.display())))?;
        if !listing.is_empty() {
            std::fs::write(dir.join("failures.txt"), listing).map_err(|e| ScenarioError::Io(e.to_string()))?;
        }
        Ok(())
    }
}
