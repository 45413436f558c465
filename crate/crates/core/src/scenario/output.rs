//! Run results and their on-disk form.
//!
//! | file | contents |
//! |------|----------|
//! | `daily.csv` | one row per (day, agent) for dealers and issuers |
//! | `market.csv` | one row per (day, security class) |
//! | `summary.json` | headline metrics for the whole run |
//! | `events.jsonl` | every event, one JSON object per line |
//!
//! Amounts in the CSV files are exact decimals in the configured unit;
//! prices and ratios are fractions with six decimals; maturities are days.
//! Empty cells mean the column does not apply to that agent kind.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ScenarioConfig, Units};
use super::ScenarioError;
use crate::analytics::Band;
use crate::dynamics::Sensitivity;
use crate::events::EventLog;
use crate::ledger::{AgentId, Day, SecurityClass};
use crate::market::VolumeDecomposition;
use crate::money::{Amount, Fraction};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DailyRow {
    pub day: Day,
    pub agent: AgentId,
    pub equity: Amount,
    pub leverage: Option<Fraction>,
    pub band: Option<Band>,
    pub slr: Option<Fraction>,
    pub slr_bound: Option<Fraction>,
    pub headroom: Option<Amount>,
    pub dla: Option<Fraction>,
    pub wla: Option<Fraction>,
    pub wam: Option<Fraction>,
    pub wal: Option<Fraction>,
    pub price: Option<Fraction>,
    pub coins: Option<Amount>,
    pub requested: Option<Amount>,
    pub filled: Option<Amount>,
    pub delayed: Option<Amount>,
    pub regime: Option<Sensitivity>,
}

impl DailyRow {
    pub fn empty(day: Day, agent: AgentId) -> Self {
        DailyRow {
            day,
            agent,
            equity: Amount::ZERO,
            leverage: None,
            band: None,
            slr: None,
            slr_bound: None,
            headroom: None,
            dla: None,
            wla: None,
            wam: None,
            wal: None,
            price: None,
            coins: None,
            requested: None,
            filled: None,
            delayed: None,
            regime: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarketRow {
    pub day: Day,
    pub class: SecurityClass,
    pub price: Fraction,
    /// Value of sale orders submitted today.
    pub submitted: Amount,
    pub fills: Amount,
    /// Value of orders left unfilled after clearing.
    pub unfilled: Amount,
    pub capacity: Amount,
    pub srf_draws: Amount,
}

/// Exact run totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Totals {
    pub requested: Amount,
    pub filled: Amount,
    pub delayed: Amount,
    pub rejected: Amount,
    pub bought: Amount,
    pub minted: Amount,
    pub srf_draws: Amount,
    /// Still queued at the horizon.
    pub unpaid: Amount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub seller: f64,
    pub retention: f64,
    pub interdealer: f64,
    pub buyer: f64,
    pub gross: f64,
}

impl VolumeReport {
    pub fn new(v: &VolumeDecomposition, u: &Units) -> Self {
        VolumeReport {
            seller: u.to_f64(v.seller),
            retention: u.to_f64(v.retention),
            interdealer: u.to_f64(v.interdealer),
            buyer: u.to_f64(v.buyer),
            gross: u.to_f64(v.gross),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipRecord {
    pub day: Day,
    pub issuer: AgentId,
    pub sensitive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IssuerSummary {
    pub id: AgentId,
    pub coins: f64,
    pub equity: f64,
    pub final_price: f64,
    pub min_price: f64,
    pub delayed: f64,
    pub max_delay_days: Day,
    pub regime: Sensitivity,
}

/// Headline metrics, written as `summary.json`. Amounts are in the
/// configured unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub horizon_days: Day,
    pub unit: String,
    pub peak_deviation_bp: f64,
    pub peak_deviation_day: Option<Day>,
    pub peak_deviation_issuer: Option<AgentId>,
    pub max_delay_days: Day,
    /// First day any issuer's equity was negative.
    pub insolvency_day: Option<Day>,
    pub requested: f64,
    pub filled: f64,
    pub delayed: f64,
    pub rejected: f64,
    pub bought: f64,
    pub minted: f64,
    pub unpaid: f64,
    pub srf_draws: f64,
    pub min_capacity: f64,
    pub max_capacity: f64,
    pub min_long_price: f64,
    pub max_bill_price: f64,
    pub submitted_volume: VolumeReport,
    pub filled_volume: VolumeReport,
    pub regime_flips: Vec<FlipRecord>,
    pub issuers: Vec<IssuerSummary>,
    pub events: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub daily: Vec<DailyRow>,
    pub market: Vec<MarketRow>,
    pub summary: Summary,
    pub totals: Totals,
    pub min_capacity: Amount,
    pub max_capacity: Amount,
    pub events: EventLog,
}

pub fn fraction_str(f: Fraction) -> String {
    let p = f.ppm();
    let sign = if p < 0 { "-" } else { "" };
    let a = p.unsigned_abs();
    format!("{sign}{}.{:06}", a / 1_000_000, a % 1_000_000)
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

pub const DAILY_HEADER: [&str; 19] = [
    "day", "agent", "kind", "equity", "leverage", "band", "slr", "slr_bound", "headroom", "dla", "wla", "wam", "wal",
    "price", "coins", "requested", "filled", "delayed", "regime",
];

pub const MARKET_HEADER: [&str; 8] = ["day", "class", "price", "submitted", "fills", "unfilled", "capacity", "srf_draws"];

fn regime_label(s: Sensitivity) -> String {
    match s {
        Sensitivity::Insensitive => "insensitive".into(),
        Sensitivity::Sensitive => "sensitive".into(),
    }
}

impl RunOutput {
    pub fn units(&self) -> &Units {
        &self.config.units
    }

    pub fn daily_csv(&self) -> Result<String, ScenarioError> {
        let u = self.units();
        let amt = |a: Amount| u.format(a);
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| ScenarioError::Io(e.to_string());
        w.write_record(DAILY_HEADER).map_err(io)?;
        for r in &self.daily {
            w.write_record([
                r.day.to_string(),
                r.agent.to_string(),
                r.agent.kind.label().to_string(),
                amt(r.equity),
                opt(r.leverage, fraction_str),
                opt(r.band, |b| b.label().to_string()),
                opt(r.slr, fraction_str),
                opt(r.slr_bound, fraction_str),
                opt(r.headroom, amt),
                opt(r.dla, fraction_str),
                opt(r.wla, fraction_str),
                opt(r.wam, fraction_str),
                opt(r.wal, fraction_str),
                opt(r.price, fraction_str),
                opt(r.coins, amt),
                opt(r.requested, amt),
                opt(r.filled, amt),
                opt(r.delayed, amt),
                opt(r.regime, regime_label),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| ScenarioError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn market_csv(&self) -> Result<String, ScenarioError> {
        let u = self.units();
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| ScenarioError::Io(e.to_string());
        w.write_record(MARKET_HEADER).map_err(io)?;
        for r in &self.market {
            w.write_record([
                r.day.to_string(),
                r.class.label().to_string(),
                fraction_str(r.price),
                u.format(r.submitted),
                u.format(r.fills),
                u.format(r.unfilled),
                u.format(r.capacity),
                u.format(r.srf_draws),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| ScenarioError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn events_jsonl(&self) -> String {
        self.events.to_jsonl()
    }

    /// Write every output file into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<(), ScenarioError> {
        let io = |e: std::io::Error| ScenarioError::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("daily.csv"), self.daily_csv()?).map_err(io)?;
        fs::write(dir.join("market.csv"), self.market_csv()?).map_err(io)?;
        fs::write(dir.join("summary.json"), self.summary_json()).map_err(io)?;
        fs::write(dir.join("events.jsonl"), self.events_jsonl()).map_err(io)?;
        Ok(())
    }

    /// Rows of one agent, in day order.
    pub fn agent_rows(&self, agent: AgentId) -> impl Iterator<Item = &DailyRow> {
        self.daily.iter().filter(move |r| r.agent == agent)
    }

    pub fn market_rows(&self, class: SecurityClass) -> impl Iterator<Item = &MarketRow> {
        self.market.iter().filter(move |r| r.class == class)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_rendering() {
        assert_eq!(fraction_str(Fraction::ONE), "1.000000");
        assert_eq!(fraction_str(Fraction::from_bp(-50)), "-0.005000");
        assert_eq!(fraction_str(Fraction::from_ppm(995_000)), "0.995000");
    }
}
