//! Solvency and liquidity metrics computed from balance-sheet inputs.
//!
//! Everything here is a pure function of integer amounts. Ratios are exact
//! integer divisions rounded half-to-even once.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instruments::PortfolioState;
use crate::ledger::Day;
use crate::money::{div_round_half_even, Amount, Fraction, PPM};

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("total assets must be positive, got {0}")]
    NonPositiveAssets(Amount),
    #[error("assets plus exposures must be positive, got {0}")]
    NonPositiveDenominator(Amount),
}

/// Capitalization band. Variants are ordered from worst to best, so a
/// higher ratio never maps to a smaller band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Critical,
    Significant,
    Under,
    Adequate,
    Well,
}

impl Band {
    pub fn label(self) -> &'static str {
        match self {
            Band::Critical => "critically_undercapitalized",
            Band::Significant => "significantly_undercapitalized",
            Band::Under => "undercapitalized",
            Band::Adequate => "adequately_capitalized",
            Band::Well => "well_capitalized",
        }
    }
}

/// Lower edge of each band, best first. Each edge belongs to its band.
const BAND_EDGES: [(Fraction, Band); 4] = [
    (Fraction::from_bp(500), Band::Well),
    (Fraction::from_bp(400), Band::Adequate),
    (Fraction::from_bp(300), Band::Under),
    (Fraction::from_bp(200), Band::Significant),
];

pub fn classify_fdicia(ratio: Fraction) -> Band {
    BAND_EDGES.iter().find(|(edge, _)| ratio >= *edge).map(|(_, b)| *b).unwrap_or(Band::Critical)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeverageReport {
    /// (assets − coins) / assets, to 1e-4.
    pub ratio: Fraction,
    pub band: Band,
}

/// Leverage of an issuer whose only liabilities are its coins.
pub fn leverage_ratio(assets: Amount, coins_outstanding: Amount) -> Result<LeverageReport, AnalyticsError> {
    if !assets.is_positive() {
        return Err(AnalyticsError::NonPositiveAssets(assets));
    }
    let hundredths = div_round_half_even((assets - coins_outstanding).minor() as i128 * 10_000, assets.minor() as i128);
    let ratio = Fraction::from_percent_hundredths(hundredths as i64);
    Ok(LeverageReport { ratio, band: classify_fdicia(ratio) })
}

/// Regulatory floor for the supplementary leverage ratio.
pub fn slr_lower_bound(gsib: bool) -> Fraction {
    if gsib {
        Fraction::from_bp(500)
    } else {
        Fraction::from_bp(300)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlrReport {
    pub slr: Fraction,
    pub lower_bound: Fraction,
    /// Additional unweighted assets the bank can add before breaching the bound.
    pub headroom_assets: Amount,
}

pub fn slr(capital: Amount, assets: Amount, exposures: Amount, gsib: bool) -> Result<SlrReport, AnalyticsError> {
    slr_with_bound(capital, assets, exposures, slr_lower_bound(gsib))
}

/// SLR against an explicit bound (for sweeps over the bound itself).
pub fn slr_with_bound(
    capital: Amount,
    assets: Amount,
    exposures: Amount,
    lower_bound: Fraction,
) -> Result<SlrReport, AnalyticsError> {
    let denom = assets + exposures;
    if !denom.is_positive() {
        return Err(AnalyticsError::NonPositiveDenominator(denom));
    }
    assert!(lower_bound > Fraction::ZERO, "SLR bound must be positive");
    let slr = Fraction::ratio(capital, denom);
    let max_denom = (capital.minor().max(0) as i128 * PPM as i128).div_euclid(lower_bound.ppm() as i128);
    let headroom = (max_denom - denom.minor() as i128).max(0);
    let headroom_assets = Amount::from_minor(i64::try_from(headroom).expect("amount overflow"));
    Ok(SlrReport { slr, lower_bound, headroom_assets })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiquidityReport {
    /// Share of assets maturing within one business day.
    pub dla: Fraction,
    /// Share of assets maturing within five business days.
    pub wla: Fraction,
    /// Dollar-weighted average maturity, in days to 1e-6.
    pub wam_days: Fraction,
    /// Dollar-weighted average life, in days to 1e-6.
    pub wal_days: Fraction,
}

impl LiquidityReport {
    pub const EMPTY: LiquidityReport =
        LiquidityReport { dla: Fraction::ZERO, wla: Fraction::ZERO, wam_days: Fraction::ZERO, wal_days: Fraction::ZERO };
}

/// Liquidity fractions and weighted maturities from (amount, days-to-maturity)
/// buckets. Non-positive amounts are ignored.
pub fn liquidity_from_buckets(buckets: &[(Amount, Day)]) -> LiquidityReport {
    let live: Vec<_> = buckets.iter().filter(|(a, _)| a.is_positive()).collect();
    let total: i128 = live.iter().map(|(a, _)| a.minor() as i128).sum();
    if total == 0 {
        return LiquidityReport::EMPTY;
    }
    let within = |days: Day| -> Fraction {
        let n: i128 = live.iter().filter(|(_, d)| *d <= days).map(|(a, _)| a.minor() as i128).sum();
        Fraction::from_ppm(div_round_half_even(n * PPM as i128, total) as i64)
    };
    let weighted: i128 = live.iter().map(|(a, d)| a.minor() as i128 * *d as i128).sum();
    let wam = Fraction::from_ppm(div_round_half_even(weighted * PPM as i128, total) as i64);
    // no instrument here resets before final maturity, so WAL coincides with WAM
    LiquidityReport { dla: within(1), wla: within(5), wam_days: wam, wal_days: wam }
}

/// Liquidity of a backing portfolio. Deposits and overnight repo count as
/// one-day instruments; securities count days to maturity (at least one).
pub fn liquidity_metrics(portfolio: &PortfolioState, today: Day) -> LiquidityReport {
    let mut buckets = vec![(portfolio.deposits, 1)];
    for b in &portfolio.treasuries {
        buckets.push((b.value(), b.maturity_day.saturating_sub(today).max(1)));
    }
    for r in &portfolio.repo {
        buckets.push((r.principal, r.second_leg_day.saturating_sub(today).max(1)));
    }
    liquidity_from_buckets(&buckets)
}
