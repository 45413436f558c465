//! Scenario configuration, deterministic execution, sweeps and output files.
//!
//! A scenario is a TOML file describing agents, policies, market
//! parameters, the run model and a schedule of shocks and flows. [`run`]
//! builds the system, steps it day by day in a fixed phase order, audits
//! the ledger after every day and returns a [`RunOutput`] that can be
//! written as `daily.csv`, `market.csv`, `summary.json` and `events.jsonl`.

pub mod config;
pub mod engine;
pub mod output;
pub mod presets;
pub mod sweep;

use thiserror::Error;

pub use config::ScenarioConfig;
pub use engine::{build_system, run, Scenario};
pub use output::{DailyRow, MarketRow, RunOutput, Summary};
pub use sweep::{load_grid, sweep, Grid, SweepPoint, SweepReport};

use crate::ledger::Day;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column} ({field}): {message}")]
    Parse { line: usize, column: usize, field: String, message: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("ledger audit failed on day {day}:\n{report}")]
    AuditFailure { day: Day, report: String },
    #[error("i/o: {0}")]
    Io(String),
}

impl ScenarioError {
    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Parse { .. } | ScenarioError::Validation(_) => 1,
            ScenarioError::AuditFailure { .. } => 2,
            ScenarioError::Io(_) => 3,
        }
    }
}

impl From<std::io::Error> for ScenarioError {
    fn from(e: std::io::Error) -> Self {
        ScenarioError::Io(e.to_string())
    }
}
