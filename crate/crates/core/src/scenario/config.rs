//! Scenario configuration: TOML schema, defaults and validation.
//!
//! Amounts are written in the scenario's declared unit (for example
//! billions of dollars) and stored internally as integers of
//! `1 / minor_per_unit` units. Rates and shares are written either as
//! basis points (`*_bp` keys) or plain fractions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::dynamics::{LikelihoodBand, ShockClass, SystemicBand};
use crate::ledger::{AgentId, AgentKind, Day, SecurityClass};
use crate::money::{Amount, Fraction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub horizon_days: Day,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub units: Units,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub market: MarketConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub banks: Vec<BankConfig>,
    #[serde(default)]
    pub dealers: Vec<DealerConfig>,
    #[serde(default)]
    pub issuers: Vec<IssuerConfig>,
    #[serde(default)]
    pub intermediaries: Vec<IntermediaryConfig>,
    #[serde(default)]
    pub holders: Vec<HolderConfig>,
    #[serde(default)]
    pub buyers: Vec<BuyerConfig>,
    #[serde(default)]
    pub shocks: Vec<ShockConfig>,
    #[serde(default)]
    pub sales: Vec<SaleConfig>,
    #[serde(default)]
    pub redemptions: Vec<RedemptionConfig>,
    #[serde(default)]
    pub mints: Vec<MintConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub label: String,
    /// Integer minor units per reported unit; a power of ten.
    pub minor_per_unit: i64,
}

impl Default for Units {
    fn default() -> Self {
        Units { label: "usd".into(), minor_per_unit: 100 }
    }
}

impl Units {
    pub fn amount(&self, x: f64) -> Amount {
        Amount::from_minor((x * self.minor_per_unit as f64).round() as i64)
    }

    pub fn decimals(&self) -> usize {
        (self.minor_per_unit as f64).log10().round() as usize
    }

    /// Exact decimal rendering of an amount in this unit.
    pub fn format(&self, a: Amount) -> String {
        let m = a.minor();
        let d = self.decimals();
        let sign = if m < 0 { "-" } else { "" };
        let abs = m.unsigned_abs();
        let per = self.minor_per_unit as u64;
        if d == 0 {
            format!("{sign}{abs}")
        } else {
            format!("{sign}{}.{:0d$}", abs / per, abs % per, d = d)
        }
    }

    pub fn to_f64(&self, a: Amount) -> f64 {
        a.minor() as f64 / self.minor_per_unit as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ParPolicyKind {
    #[default]
    RigorousFixed,
    Corridor,
    BestEffort,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub access_mode: crate::settlement::AccessMode,
    pub par_policy: ParPolicyKind,
    pub corridor_bp: f64,
    pub srf: bool,
    pub issuer_reserve_access: bool,
    pub eslr_reform: bool,
    /// Extra dealer headroom under the reform, shared evenly.
    pub eslr_extra_headroom: f64,
    pub intermediary_behavior: crate::settlement::IntermediaryBehavior,
    /// Mints are declined when the daily Treasury return is at or below this.
    pub negative_carry_floor_bp: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            access_mode: crate::settlement::AccessMode::Direct,
            par_policy: ParPolicyKind::RigorousFixed,
            corridor_bp: 50.0,
            srf: false,
            issuer_reserve_access: false,
            eslr_reform: false,
            eslr_extra_headroom: 0.0,
            intermediary_behavior: crate::settlement::IntermediaryBehavior::RedeemImmediately,
            negative_carry_floor_bp: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketConfig {
    pub depth: f64,
    pub impact_coeff_bp: f64,
    pub max_dislocation_bp: f64,
    pub bill_impact_share: f64,
    pub flight_to_safety: bool,
    pub bill_rally_share: f64,
    /// Overrides every dealer's SLR bound when set.
    pub slr_bound_bp: Option<f64>,
    pub haircut_bp: f64,
    pub long_collateral_share: f64,
    pub chain_length: u32,
    /// Retention as `[retained, sold]`, e.g. `[72.5, 216]`.
    pub retention: [f64; 2],
    pub replacement_frac: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            depth: 1_000.0,
            impact_coeff_bp: 100.0,
            max_dislocation_bp: 500.0,
            bill_impact_share: 0.25,
            flight_to_safety: false,
            bill_rally_share: 0.25,
            slr_bound_bp: None,
            haircut_bp: 200.0,
            long_collateral_share: 0.75,
            chain_length: 2,
            retention: [72.5, 216.0],
            replacement_frac: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    #[default]
    Step,
    Ramp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Share of coins redeemed per day while holders are insensitive.
    pub baseline_rate_bp: f64,
    pub shifted_rate_bp: f64,
    pub threshold_bp: f64,
    pub delay_trigger_days: Day,
    pub recovery_days: Day,
    pub transition: TransitionKind,
    pub ramp_width_bp: f64,
    /// Price decline per unit of failing share of coins.
    pub delay_price_coeff: f64,
    pub recovery_bp_per_day: f64,
    pub intervention_impact: f64,
    pub price_floor_bp: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            baseline_rate_bp: 10.0,
            shifted_rate_bp: 1_000.0,
            threshold_bp: 300.0,
            delay_trigger_days: 3,
            recovery_days: 5,
            transition: TransitionKind::Step,
            ramp_width_bp: 100.0,
            delay_price_coeff: 1.0,
            recovery_bp_per_day: 25.0,
            intervention_impact: 1.0,
            price_floor_bp: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankConfig {
    pub id: AgentId,
    #[serde(default)]
    pub capital: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DealerConfig {
    pub id: AgentId,
    pub bank: AgentId,
    pub capital: f64,
    pub assets: f64,
    #[serde(default)]
    pub exposures: f64,
    #[serde(default = "yes")]
    pub gsib: bool,
    /// Private repo funding the dealer can raise per day.
    pub reserve_access: f64,
    /// Part of `assets` held as cash on deposit.
    #[serde(default)]
    pub cash: f64,
    /// Long-duration share of the securities inventory.
    #[serde(default = "three_quarters")]
    pub long_share: f64,
    #[serde(default = "long_days")]
    pub long_maturity_days: Day,
    #[serde(default = "bill_days")]
    pub bill_maturity_days: Day,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Allocations {
    #[serde(default)]
    pub deposits: f64,
    #[serde(default)]
    pub bills: f64,
    #[serde(default)]
    pub repo: f64,
    #[serde(default)]
    pub long: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssuerConfig {
    pub id: AgentId,
    pub bank: AgentId,
    pub coins: f64,
    pub assets: f64,
    pub allocations: Allocations,
    #[serde(default = "bill_days")]
    pub bill_maturity_days: Day,
    #[serde(default = "long_days")]
    pub long_maturity_days: Day,
    #[serde(default = "default_chains")]
    pub chains: Vec<String>,
    #[serde(default = "yes")]
    pub genius_compliant: bool,
    /// Holders allowed to redeem directly under intermediated access, in
    /// addition to every intermediary.
    #[serde(default)]
    pub eligible: Vec<AgentId>,
    /// Annual Treasury yield, basis points (actual/360).
    #[serde(default = "default_yield")]
    pub treasury_yield_bp: f64,
    #[serde(default = "default_yield")]
    pub repo_rate_bp: f64,
    #[serde(default)]
    pub repo_counterparties: Vec<AgentId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntermediaryConfig {
    pub id: AgentId,
    pub bank: AgentId,
    #[serde(default)]
    pub cash: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderConfig {
    pub id: AgentId,
    pub bank: AgentId,
    /// Share of every issuer's coins held, relative to other holders.
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default)]
    pub cash: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuyerConfig {
    pub id: AgentId,
    pub bank: AgentId,
    #[serde(default)]
    pub cash: f64,
    #[serde(default)]
    pub bills: f64,
    #[serde(default)]
    pub long: f64,
    /// Whether the buyer lends cash to dealers in repo.
    #[serde(default = "yes")]
    pub lender: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShockConfig {
    pub class: String,
    #[serde(default = "moderate")]
    pub likelihood: String,
    #[serde(default = "medium")]
    pub systemic: String,
    /// UncontrolledSupply: extra coins as a fraction of supply.
    /// ConfidenceOnly: price drop in basis points (sampled when absent).
    pub magnitude: Option<f64>,
    /// Price drop accompanying a supply shock, basis points.
    pub confidence_bp: Option<f64>,
    #[serde(default = "one_day")]
    pub duration: Day,
    #[serde(default = "default_chain")]
    pub chain: String,
    pub issuer: Option<AgentId>,
    pub recipient: Option<AgentId>,
    pub day: Day,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaleConfig {
    pub day: Day,
    pub seller: AgentId,
    pub class: SecurityClass,
    /// Face amount.
    pub amount: f64,
}

/// A one-off redemption wave spread over holders by weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedemptionConfig {
    pub day: Day,
    pub issuer: AgentId,
    /// Share of coins outstanding.
    pub share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MintConfig {
    pub day: Day,
    pub issuer: AgentId,
    pub buyer: AgentId,
    pub amount: f64,
    /// Invest the proceeds in bills bought from this agent.
    pub bills_from: Option<AgentId>,
}

fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn one_day() -> Day {
    1
}
fn three_quarters() -> f64 {
    0.75
}
fn long_days() -> Day {
    3_650
}
fn bill_days() -> Day {
    30
}
fn default_yield() -> f64 {
    400.0
}
fn default_chain() -> String {
    "ethereum".into()
}
fn default_chains() -> Vec<String> {
    vec![default_chain()]
}
fn moderate() -> String {
    "moderate".into()
}
fn medium() -> String {
    "medium".into()
}

/// Basis points to an exact fraction (1 bp = 100 ppm).
pub fn bp(x: f64) -> Fraction {
    Fraction::from_ppm((x * 100.0).round() as i64)
}

pub fn share(x: f64) -> Fraction {
    Fraction::from_ppm((x * 1e6).round() as i64)
}

/// Annual basis points to a daily rate on an actual/360 basis.
pub fn daily(annual_bp: f64) -> Fraction {
    Fraction::from_ppm((annual_bp * 100.0 / 360.0).round() as i64)
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map(|i| offset - i).unwrap_or(offset + 1);
    (line, col)
}

impl ScenarioConfig {
    /// Parse and validate TOML text.
    pub fn from_toml(src: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = match toml::from_str(src) {
            Ok(c) => c,
            Err(e) => {
                let (line, column) = e.span().map(|s| line_col(src, s.start)).unwrap_or((0, 0));
                let field = toml::from_str::<toml::Value>(src)
                    .ok()
                    .and_then(|v| serde_path_to_error::deserialize::<_, ScenarioConfig>(v).err())
                    .map(|pe| pe.path().to_string())
                    .unwrap_or_default();
                return Err(ScenarioError::Parse { line, column, field, message: e.message().to_string() });
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(v: toml::Value) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(v).map_err(|e| ScenarioError::Parse {
            line: 0,
            column: 0,
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let src = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&src)
    }

    /// Check every cross-reference and numeric constraint.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |s: String| Err(ScenarioError::Validation(s));
        if self.horizon_days < 1 {
            return fail("horizon_days ≥ 1".into());
        }
        let m = self.units.minor_per_unit;
        if m < 1 || 10i64.pow((m as f64).log10().round() as u32) != m {
            return fail("units.minor_per_unit must be a power of ten".into());
        }
        let mut ids = BTreeSet::new();
        let mut check_id = |id: AgentId, kind: AgentKind, section: &str| -> Result<(), ScenarioError> {
            if id.kind != kind {
                return Err(ScenarioError::Validation(format!("{section} entry {id} must be a {} id", kind.label())));
            }
            if !ids.insert(id) {
                return Err(ScenarioError::Validation(format!("duplicate agent id {id}")));
            }
            Ok(())
        };
        for b in &self.banks {
            check_id(b.id, AgentKind::Bank, "banks")?;
        }
        for d in &self.dealers {
            check_id(d.id, AgentKind::BrokerDealer, "dealers")?;
        }
        for i in &self.issuers {
            check_id(i.id, AgentKind::Issuer, "issuers")?;
        }
        for i in &self.intermediaries {
            check_id(i.id, AgentKind::Intermediary, "intermediaries")?;
        }
        for h in &self.holders {
            check_id(h.id, AgentKind::Holder, "holders")?;
        }
        for b in &self.buyers {
            check_id(b.id, AgentKind::TreasuryBuyer, "buyers")?;
        }
        let banks: BTreeSet<AgentId> = self.banks.iter().map(|b| b.id).collect();
        let has_bank = |who: AgentId, bank: AgentId| -> Result<(), ScenarioError> {
            if banks.contains(&bank) {
                Ok(())
            } else {
                Err(ScenarioError::Validation(format!("{who} references unknown bank {bank}")))
            }
        };
        let nonneg = |what: String, x: f64| -> Result<(), ScenarioError> {
            if x.is_finite() && x >= 0.0 {
                Ok(())
            } else {
                Err(ScenarioError::Validation(format!("{what} must be a finite non-negative number")))
            }
        };
        for b in &self.banks {
            nonneg(format!("{}.capital", b.id), b.capital)?;
        }
        let units = &self.units;
        for d in &self.dealers {
            has_bank(d.id, d.bank)?;
            for (k, v) in [
                ("capital", d.capital),
                ("assets", d.assets),
                ("exposures", d.exposures),
                ("reserve_access", d.reserve_access),
                ("cash", d.cash),
            ] {
                nonneg(format!("{}.{k}", d.id), v)?;
            }
            if !(0.0..=1.0).contains(&d.long_share) {
                return fail(format!("{}.long_share in [0, 1]", d.id));
            }
            if units.amount(d.cash) > units.amount(d.assets) {
                return fail(format!("{}: cash ≤ assets", d.id));
            }
            if units.amount(d.capital) > units.amount(d.assets) {
                return fail(format!("{}: capital ≤ assets", d.id));
            }
            if units.amount(d.capital).is_zero() && units.amount(d.assets).is_positive() {
                return fail(format!("{}: capital > 0", d.id));
            }
        }
        let dealers: BTreeSet<AgentId> = self.dealers.iter().map(|d| d.id).collect();
        let mut dealer_repo: BTreeMap<AgentId, Amount> = BTreeMap::new();
        for i in &self.issuers {
            has_bank(i.id, i.bank)?;
            nonneg(format!("{}.coins", i.id), i.coins)?;
            nonneg(format!("{}.assets", i.id), i.assets)?;
            let a = &i.allocations;
            for (k, v) in [("deposits", a.deposits), ("bills", a.bills), ("repo", a.repo), ("long", a.long)] {
                nonneg(format!("{}.allocations.{k}", i.id), v)?;
            }
            let total = units.amount(a.deposits) + units.amount(a.bills) + units.amount(a.repo) + units.amount(a.long);
            if total != units.amount(i.assets) {
                return fail(format!("allocations≠assets for {}: {} vs {}", i.id, units.format(total), units.format(units.amount(i.assets))));
            }
            if units.amount(a.repo).is_positive() && i.repo_counterparties.is_empty() {
                return fail(format!("{}: repo allocation needs repo_counterparties", i.id));
            }
            for c in &i.repo_counterparties {
                if !dealers.contains(c) {
                    return fail(format!("{} references unknown dealer {c}", i.id));
                }
            }
            if !i.repo_counterparties.is_empty() {
                let weights = vec![Amount::from_minor(1); i.repo_counterparties.len()];
                for (c, amt) in i.repo_counterparties.iter().zip(units.amount(a.repo).allocate(&weights)) {
                    *dealer_repo.entry(*c).or_insert(Amount::ZERO) += amt;
                }
            }
            for e in &i.eligible {
                if !ids.contains(e) {
                    return fail(format!("{} lists unknown eligible redeemer {e}", i.id));
                }
            }
            if i.chains.is_empty() {
                return fail(format!("{}: at least one chain", i.id));
            }
            if i.bill_maturity_days < 1 || i.long_maturity_days < 1 {
                return fail(format!("{}: maturities ≥ 1 day", i.id));
            }
        }
        for d in &self.dealers {
            let funded = units.amount(d.assets) - units.amount(d.capital);
            let owed = dealer_repo.get(&d.id).copied().unwrap_or(Amount::ZERO);
            if owed > funded {
                return fail(format!("{}: issuer repos {} exceed assets − capital {}", d.id, units.format(owed), units.format(funded)));
            }
            if (funded - owed).is_positive() && !self.buyers.iter().any(|b| b.lender) {
                return fail(format!("{}: a lending buyer is needed to fund the dealer", d.id));
            }
        }
        for x in &self.intermediaries {
            has_bank(x.id, x.bank)?;
            nonneg(format!("{}.cash", x.id), x.cash)?;
        }
        for h in &self.holders {
            has_bank(h.id, h.bank)?;
            nonneg(format!("{}.weight", h.id), h.weight)?;
            nonneg(format!("{}.cash", h.id), h.cash)?;
        }
        if !self.issuers.is_empty() && self.issuers.iter().any(|i| units.amount(i.coins).is_positive()) {
            let total: f64 = self.holders.iter().map(|h| h.weight).sum();
            if total <= 0.0 {
                return fail("holders: coins outstanding need at least one holder with positive weight".into());
            }
        }
        for b in &self.buyers {
            has_bank(b.id, b.bank)?;
            for (k, v) in [("cash", b.cash), ("bills", b.bills), ("long", b.long)] {
                nonneg(format!("{}.{k}", b.id), v)?;
            }
        }
        let issuers: BTreeSet<AgentId> = self.issuers.iter().map(|i| i.id).collect();
        for (n, s) in self.shocks.iter().enumerate() {
            s.class.parse::<ShockClass>().map_err(|e| ScenarioError::Validation(format!("shocks[{n}]: {e}")))?;
            s.likelihood.parse::<LikelihoodBand>().map_err(|e| ScenarioError::Validation(format!("shocks[{n}].likelihood: {e}")))?;
            s.systemic.parse::<SystemicBand>().map_err(|e| ScenarioError::Validation(format!("shocks[{n}].systemic: {e}")))?;
            if let Some(i) = s.issuer {
                if !issuers.contains(&i) {
                    return fail(format!("shocks[{n}] references unknown issuer {i}"));
                }
            }
            if let Some(r) = s.recipient {
                if !ids.contains(&r) || r.kind == AgentKind::Bank || r.kind == AgentKind::Issuer {
                    return fail(format!("shocks[{n}] recipient {r} must be a declared non-bank, non-issuer agent"));
                }
            }
            if let Some(m) = s.magnitude {
                nonneg(format!("shocks[{n}].magnitude"), m)?;
            }
            if s.class.parse::<ShockClass>() == Ok(ShockClass::UncontrolledSupply) && s.recipient.is_none() {
                return fail(format!("shocks[{n}]: a supply shock needs a recipient"));
            }
            if s.day < 1 {
                return fail(format!("shocks[{n}].day ≥ 1"));
            }
        }
        for (n, s) in self.sales.iter().enumerate() {
            if !ids.contains(&s.seller) {
                return fail(format!("sales[{n}] references unknown seller {}", s.seller));
            }
            nonneg(format!("sales[{n}].amount"), s.amount)?;
        }
        for (n, r) in self.redemptions.iter().enumerate() {
            if !issuers.contains(&r.issuer) {
                return fail(format!("redemptions[{n}] references unknown issuer {}", r.issuer));
            }
            if !(0.0..=1.0).contains(&r.share) {
                return fail(format!("redemptions[{n}].share in [0, 1]"));
            }
        }
        for (n, m) in self.mints.iter().enumerate() {
            if !issuers.contains(&m.issuer) || !ids.contains(&m.buyer) {
                return fail(format!("mints[{n}] references an unknown agent"));
            }
            if let Some(s) = m.bills_from {
                if !ids.contains(&s) {
                    return fail(format!("mints[{n}] references unknown seller {s}"));
                }
            }
            nonneg(format!("mints[{n}].amount"), m.amount)?;
        }
        let mk = &self.market;
        if mk.chain_length < 1 {
            return fail("market.chain_length ≥ 1".into());
        }
        let [kept, sold] = mk.retention;
        if !(sold > 0.0 && kept >= 0.0 && kept < sold) {
            return fail("market.retention: 0 ≤ retained < sold".into());
        }
        if mk.depth <= 0.0 || !mk.depth.is_finite() {
            return fail("market.depth > 0".into());
        }
        for (k, v) in [
            ("bill_impact_share", mk.bill_impact_share),
            ("bill_rally_share", mk.bill_rally_share),
            ("long_collateral_share", mk.long_collateral_share),
            ("replacement_frac", mk.replacement_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("market.{k} in [0, 1]"));
            }
        }
        if let Some(b) = mk.slr_bound_bp {
            if b <= 0.0 {
                return fail("market.slr_bound_bp > 0".into());
            }
        }
        if self.policy.par_policy == ParPolicyKind::Corridor && self.policy.corridor_bp <= 0.0 {
            return fail("policy.corridor_bp > 0".into());
        }
        let r = &self.run;
        if r.shifted_rate_bp <= r.baseline_rate_bp {
            return fail("run.shifted_rate_bp > run.baseline_rate_bp".into());
        }
        if r.threshold_bp <= 0.0 {
            return fail("run.threshold_bp > 0".into());
        }
        if r.transition == TransitionKind::Ramp && !(r.ramp_width_bp > 0.0 && r.ramp_width_bp < r.threshold_bp) {
            return fail("run.ramp_width_bp in (0, threshold_bp)".into());
        }
        if r.price_floor_bp <= 0.0 {
            return fail("run.price_floor_bp > 0".into());
        }
        Ok(())
    }

    /// Sort every agent list by id so declaration order never matters.
    pub fn canonicalize(&mut self) {
        self.banks.sort_by_key(|a| a.id);
        self.dealers.sort_by_key(|a| a.id);
        self.issuers.sort_by_key(|a| a.id);
        self.intermediaries.sort_by_key(|a| a.id);
        self.holders.sort_by_key(|a| a.id);
        self.buyers.sort_by_key(|a| a.id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"
horizon_days = 3

[[banks]]
id = "bank-0"

[[issuers]]
id = "issuer-0"
bank = "bank-0"
coins = 90
assets = 100
allocations = { deposits = 40, bills = 60 }

[[holders]]
id = "holder-0"
bank = "bank-0"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(bp(c.market.haircut_bp), Fraction::from_bp(200));
        assert_eq!(bp(c.run.threshold_bp), Fraction::from_bp(300));
        assert_eq!(c.market.chain_length, 2);
        assert_eq!(c.units.minor_per_unit, 100);
    }

    #[test]
    fn allocation_mismatch_is_named() {
        let bad = MINIMAL.replace("bills = 60", "bills = 59");
        match ScenarioConfig::from_toml(&bad) {
            Err(ScenarioError::Validation(m)) => assert!(m.contains("allocations≠assets"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_and_field() {
        let bad = MINIMAL.replace("coins = 90", "coins = \"many\"");
        match ScenarioConfig::from_toml(&bad) {
            Err(ScenarioError::Parse { line, field, .. }) => {
                assert_eq!(line, 11);
                assert_eq!(field, "issuers[0].coins");
            }
            other => panic!("{other:?}"),
        }
        let unknown = MINIMAL.replace("horizon_days = 3", "horizon_days = 3\nhorizon = 4");
        assert!(matches!(ScenarioConfig::from_toml(&unknown), Err(ScenarioError::Parse { .. })));
    }

    #[test]
    fn unknown_bank_is_rejected() {
        let bad = MINIMAL.replace("id = \"holder-0\"\nbank = \"bank-0\"", "id = \"holder-0\"\nbank = \"bank-9\"");
        assert_ne!(bad, MINIMAL);
        assert!(matches!(ScenarioConfig::from_toml(&bad), Err(ScenarioError::Validation(_))));
    }

    #[test]
    fn unit_formatting() {
        let u = Units { label: "bn".into(), minor_per_unit: 1000 };
        assert_eq!(u.format(u.amount(72.5)), "72.500");
        assert_eq!(u.format(Amount::from_minor(-5)), "-0.005");
        assert_eq!(daily(360.0), Fraction::from_ppm(100));
    }
}
