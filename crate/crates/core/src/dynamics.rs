//! Redemption demand, confidence and technical shocks.
//!
//! Holders treat a stablecoin as information-insensitive money until the
//! secondary price slips far enough from par, or redemptions stall long
//! enough, that they start to scrutinize the backing. At that point demand
//! jumps to a run rate and stays there until the price has re-pinned and
//! the queue has cleared for a number of consecutive days.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{AgentId, Day};
use crate::money::{Amount, Fraction};
use crate::settlement::AccessMode;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DynamicsError {
    #[error("unknown shock class `{0}`")]
    UnknownShockClass(String),
    #[error("unknown band `{0}`")]
    UnknownBand(String),
    #[error("run model: {0}")]
    InvalidModel(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensitivity {
    Insensitive,
    Sensitive,
}

/// How demand moves from the baseline to the run rate as deviation grows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transition {
    /// Two rates, switched at the threshold.
    Step,
    /// Linear interpolation over `width` below the threshold, then the run
    /// rate. A smooth stand-in for a logistic curve.
    Ramp { width: Fraction },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunModel {
    pub baseline_rate: Fraction,
    pub shifted_rate: Fraction,
    pub deviation_threshold: Fraction,
    /// Age of the oldest delayed redemption that flips the regime.
    pub delay_trigger_days: Day,
    pub recovery_days: Day,
    pub transition: Transition,
    pub state: Sensitivity,
    /// Consecutive calm days seen while Sensitive.
    pub calm_days: Day,
}

impl RunModel {
    pub fn new(baseline_rate: Fraction, shifted_rate: Fraction, deviation_threshold: Fraction) -> Result<Self, DynamicsError> {
        let m = RunModel {
            baseline_rate,
            shifted_rate,
            deviation_threshold,
            delay_trigger_days: 3,
            recovery_days: 5,
            transition: Transition::Step,
            state: Sensitivity::Insensitive,
            calm_days: 0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.shifted_rate <= self.baseline_rate {
            return Err(DynamicsError::InvalidModel("shifted rate must exceed baseline"));
        }
        if self.deviation_threshold <= Fraction::ZERO {
            return Err(DynamicsError::InvalidModel("threshold must be positive"));
        }
        if let Transition::Ramp { width } = self.transition {
            if width <= Fraction::ZERO || width >= self.deviation_threshold {
                return Err(DynamicsError::InvalidModel("ramp width must be in (0, threshold)"));
            }
        }
        Ok(())
    }

    /// Whether these observations are enough to flip to Sensitive.
    pub fn triggers(&self, deviation: Fraction, delay_age: Day) -> bool {
        deviation >= self.deviation_threshold || (self.delay_trigger_days > 0 && delay_age >= self.delay_trigger_days)
    }

    /// Demand rate for a state and observation, without updating anything.
    pub fn rate_for(&self, state: Sensitivity, deviation: Fraction, delay_age: Day) -> Fraction {
        if state == Sensitivity::Sensitive || self.triggers(deviation, delay_age) {
            return self.shifted_rate;
        }
        match self.transition {
            Transition::Step => self.baseline_rate,
            Transition::Ramp { width } => {
                let start = self.deviation_threshold - width;
                if deviation <= start {
                    self.baseline_rate
                } else {
                    let t = Fraction::ratio(
                        Amount::from_minor((deviation - start).ppm()),
                        Amount::from_minor(width.ppm()),
                    );
                    self.baseline_rate + (self.shifted_rate - self.baseline_rate) * t
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfidenceState {
    pub secondary_price: Fraction,
    /// Age in days of the oldest redemption past its horizon.
    pub pending_delay_age: Day,
    pub last_shock: Option<usize>,
}

impl Default for ConfidenceState {
    fn default() -> Self {
        ConfidenceState { secondary_price: Fraction::ONE, pending_delay_age: 0, last_shock: None }
    }
}

impl ConfidenceState {
    pub fn deviation(&self) -> Fraction {
        (Fraction::ONE - self.secondary_price).abs()
    }
}

/// Outcome of one day's demand evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Demand {
    pub amount: Amount,
    pub rate: Fraction,
    /// `Some(new_state)` when the regime changed today.
    pub flipped: Option<Sensitivity>,
}

/// Today's requested redemptions, updating the regime with hysteresis.
pub fn redemption_demand(model: &mut RunModel, conf: &ConfidenceState, coins: Amount) -> Demand {
    let deviation = conf.deviation();
    let age = conf.pending_delay_age;
    let before = model.state;
    match model.state {
        Sensitivity::Insensitive => {
            if model.triggers(deviation, age) {
                model.state = Sensitivity::Sensitive;
                model.calm_days = 0;
            }
        }
        Sensitivity::Sensitive => {
            if deviation.is_zero() && age == 0 {
                model.calm_days += 1;
                if model.calm_days >= model.recovery_days {
                    model.state = Sensitivity::Insensitive;
                    model.calm_days = 0;
                }
            } else {
                model.calm_days = 0;
            }
        }
    }
    let rate = model.rate_for(model.state, deviation, age);
    Demand { amount: coins.max(Amount::ZERO).scale(rate), rate, flipped: (model.state != before).then_some(model.state) }
}

/// Price-process coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceParams {
    /// Price decline per unit of failing fraction (failing / coins).
    pub delay_coeff: Fraction,
    /// Mean reversion toward par per calm day.
    pub recovery_per_day: Fraction,
    /// Price rise per unit of coins bought back / coins outstanding.
    pub intervention_impact: Fraction,
    pub floor: Fraction,
}

impl Default for PriceParams {
    fn default() -> Self {
        PriceParams {
            delay_coeff: Fraction::ONE,
            recovery_per_day: Fraction::from_bp(25),
            intervention_impact: Fraction::ONE,
            floor: Fraction::from_bp(100),
        }
    }
}

/// Issuer support observed today.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Support {
    pub bought: Amount,
    pub shock_active: bool,
}

/// Move the secondary price for one day.
///
/// `failing` is redemption value past its horizon plus redemption-driven
/// sales dealers could not absorb.
pub fn update_secondary_price(
    conf: &ConfidenceState,
    failing: Amount,
    coins: Amount,
    shock_effect: Fraction,
    access: AccessMode,
    params: &PriceParams,
    support: Support,
) -> ConfidenceState {
    let mut next = *conf;
    let fail_frac = if coins.is_positive() && failing.is_positive() {
        Fraction::ratio(failing.min(coins), coins)
    } else {
        Fraction::ZERO
    };
    let failure_drop = fail_frac * params.delay_coeff;
    let price = match access {
        AccessMode::Direct => {
            if !fail_frac.is_zero() {
                Fraction::ONE - failure_drop - shock_effect
            } else if support.shock_active || !shock_effect.is_zero() {
                conf.secondary_price - shock_effect
            } else {
                Fraction::ONE
            }
        }
        AccessMode::Intermediated => {
            let stressed = !fail_frac.is_zero() || support.shock_active;
            let mut p = conf.secondary_price - failure_drop - shock_effect;
            if support.bought.is_positive() && coins.is_positive() {
                let lift = Fraction::ratio(support.bought.min(coins), coins) * params.intervention_impact;
                p = (p + lift).min(Fraction::ONE.max(conf.secondary_price));
            }
            if !stressed && shock_effect.is_zero() && p < Fraction::ONE {
                p = (p + params.recovery_per_day).min(Fraction::ONE);
            }
            p
        }
    };
    next.secondary_price = price.max(params.floor);
    next
}

/// A confidence shock moves the secondary price as soon as it lands.
pub fn shock_price(conf: &ConfidenceState, effect: Fraction, shock: usize, params: &PriceParams) -> ConfidenceState {
    ConfidenceState {
        secondary_price: (conf.secondary_price - effect).max(params.floor),
        last_shock: Some(shock),
        ..*conf
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockClass {
    LivenessFault,
    UncontrolledSupply,
    ConfidenceOnly,
    CorrelatedLiveness,
}

impl ShockClass {
    pub fn label(self) -> &'static str {
        match self {
            ShockClass::LivenessFault => "liveness_fault",
            ShockClass::UncontrolledSupply => "uncontrolled_supply",
            ShockClass::ConfidenceOnly => "confidence_only",
            ShockClass::CorrelatedLiveness => "correlated_liveness",
        }
    }
}

impl fmt::Display for ShockClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ShockClass {
    type Err = DynamicsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace(['-', ' '], "_");
        match norm.as_str() {
            "liveness_fault" | "livenessfault" => Ok(ShockClass::LivenessFault),
            "uncontrolled_supply" | "uncontrolledsupply" => Ok(ShockClass::UncontrolledSupply),
            "confidence_only" | "confidenceonly" => Ok(ShockClass::ConfidenceOnly),
            "correlated_liveness" | "correlatedliveness" => Ok(ShockClass::CorrelatedLiveness),
            _ => Err(DynamicsError::UnknownShockClass(s.to_string())),
        }
    }
}

/// Likelihood axis of the technical risk matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodBand {
    Most,
    Moderate,
    Least,
}

/// Systemic-impact axis of the technical risk matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemicBand {
    High,
    Medium,
    Low,
}

impl SystemicBand {
    /// Confidence-price drop range observed in past incidents of this impact.
    pub fn magnitude_range(self) -> (Fraction, Fraction) {
        match self {
            SystemicBand::High => (Fraction::from_bp(1_350), Fraction::from_bp(3_000)),
            SystemicBand::Medium => (Fraction::from_bp(750), Fraction::from_bp(1_350)),
            SystemicBand::Low => (Fraction::from_bp(350), Fraction::from_bp(750)),
        }
    }
}

impl FromStr for LikelihoodBand {
    type Err = DynamicsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "most" => Ok(LikelihoodBand::Most),
            "moderate" => Ok(LikelihoodBand::Moderate),
            "least" => Ok(LikelihoodBand::Least),
            _ => Err(DynamicsError::UnknownBand(s.to_string())),
        }
    }
}

impl FromStr for SystemicBand {
    type Err = DynamicsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "high" => Ok(SystemicBand::High),
            "medium" => Ok(SystemicBand::Medium),
            "low" => Ok(SystemicBand::Low),
            _ => Err(DynamicsError::UnknownBand(s.to_string())),
        }
    }
}

/// A scheduled technical shock.
///
/// `magnitude` means: extra coins as a fraction of outstanding for
/// UncontrolledSupply; price drop for ConfidenceOnly (sampled from the
/// systemic band's range when absent). Liveness classes ignore it.
/// `confidence` is the price effect that accompanies a supply shock.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShockSpec {
    pub class: ShockClass,
    pub likelihood: LikelihoodBand,
    pub systemic: SystemicBand,
    pub magnitude: Option<Fraction>,
    pub confidence: Option<Fraction>,
    pub duration: Day,
    pub chain: String,
    pub issuer: Option<AgentId>,
    pub recipient: Option<AgentId>,
    pub day: Day,
}

/// What a shock does once resolved against the world.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShockEffect {
    pub issuers: Vec<AgentId>,
    /// Last day (inclusive) of the effect.
    pub until: Day,
    pub blocks_chain: bool,
    pub price_effect: Fraction,
    pub mint: Option<(AgentId, Amount)>,
}

/// Resolve a shock: which issuers it hits and how hard. `chains` lists each
/// issuer with the chains it is deployed on; `coins` gives its outstanding
/// supply.
pub fn resolve_shock(
    spec: &ShockSpec,
    chains: &[(AgentId, Vec<String>)],
    coins: impl Fn(AgentId) -> Amount,
    rng: &mut ChaCha8Rng,
) -> ShockEffect {
    let on_chain: Vec<AgentId> = chains.iter().filter(|(_, cs)| cs.contains(&spec.chain)).map(|(i, _)| *i).collect();
    let issuers = match (spec.class, spec.issuer) {
        (ShockClass::CorrelatedLiveness, _) => on_chain,
        (_, Some(i)) => vec![i],
        (_, None) => on_chain.into_iter().take(1).collect(),
    };
    let until = spec.day + spec.duration.max(1) - 1;
    let mut effect = ShockEffect { issuers, until, blocks_chain: false, price_effect: Fraction::ZERO, mint: None };
    match spec.class {
        ShockClass::LivenessFault | ShockClass::CorrelatedLiveness => effect.blocks_chain = true,
        ShockClass::UncontrolledSupply => {
            if let (Some(issuer), Some(recipient)) = (effect.issuers.first().copied(), spec.recipient) {
                let m = spec.magnitude.unwrap_or(Fraction::ZERO);
                effect.mint = Some((recipient, coins(issuer).scale(m)));
            }
            effect.price_effect = spec.confidence.unwrap_or(Fraction::ZERO);
        }
        ShockClass::ConfidenceOnly => {
            effect.price_effect = spec.magnitude.unwrap_or_else(|| sample_magnitude(spec.systemic, rng));
        }
    }
    effect
}

/// Uniform draw from a systemic band's range, in whole ppm.
pub fn sample_magnitude(band: SystemicBand, rng: &mut ChaCha8Rng) -> Fraction {
    let (lo, hi) = band.magnitude_range();
    Fraction::from_ppm(rng.random_range(lo.ppm()..=hi.ppm()))
}

/// Value at risk per day over the cost of an attack: how much a bad actor
/// could extract relative to what the attack costs. Grows with supply.
pub fn attack_incentive_ratio(coins: Amount, extractable: Fraction, attack_cost: Amount) -> Option<Fraction> {
    attack_cost.is_positive().then(|| Fraction::ratio(coins.scale(extractable), attack_cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn model() -> RunModel {
        RunModel::new(Fraction::from_bp(10), Fraction::from_bp(1_000), Fraction::from_bp(300)).unwrap()
    }

    fn conf_at(dev_bp: i64, age: Day) -> ConfidenceState {
        ConfidenceState { secondary_price: Fraction::ONE - Fraction::from_bp(dev_bp), pending_delay_age: age, last_shock: None }
    }

    #[test]
    fn par_gives_baseline() {
        let mut m = model();
        let d = redemption_demand(&mut m, &conf_at(0, 0), Amount::dollars(1_000));
        assert_eq!(d.amount, Amount::dollars(1));
        assert_eq!(d.flipped, None);
    }

    #[test]
    fn threshold_boundary() {
        let mut m = model();
        assert_eq!(redemption_demand(&mut m, &conf_at(299, 0), Amount::dollars(1_000)).flipped, None);
        let d = redemption_demand(&mut m, &conf_at(300, 0), Amount::dollars(1_000));
        assert_eq!(d.flipped, Some(Sensitivity::Sensitive));
        assert_eq!(d.amount, Amount::dollars(100));
    }

    #[test]
    fn delay_age_triggers() {
        let mut m = model();
        let d = redemption_demand(&mut m, &conf_at(0, 3), Amount::dollars(1_000));
        assert_eq!(m.state, Sensitivity::Sensitive);
        assert_eq!(d.rate, m.shifted_rate);
    }

    #[test]
    fn hysteresis_needs_full_recovery_window() {
        let mut m = model();
        redemption_demand(&mut m, &conf_at(400, 0), Amount::dollars(1));
        for _ in 0..4 {
            redemption_demand(&mut m, &conf_at(0, 0), Amount::dollars(1));
            assert_eq!(m.state, Sensitivity::Sensitive);
        }
        redemption_demand(&mut m, &conf_at(1, 0), Amount::dollars(1));
        assert_eq!(m.calm_days, 0);
        for _ in 0..4 {
            redemption_demand(&mut m, &conf_at(0, 0), Amount::dollars(1));
        }
        let d = redemption_demand(&mut m, &conf_at(0, 0), Amount::dollars(1));
        assert_eq!(d.flipped, Some(Sensitivity::Insensitive));
    }

    #[test]
    fn ramp_interpolates() {
        let mut m = model();
        m.transition = Transition::Ramp { width: Fraction::from_bp(100) };
        m.validate().unwrap();
        assert_eq!(m.rate_for(Sensitivity::Insensitive, Fraction::from_bp(200), 0), m.baseline_rate);
        let mid = m.rate_for(Sensitivity::Insensitive, Fraction::from_bp(250), 0);
        assert_eq!(mid, Fraction::from_bp(505));
        m.transition = Transition::Ramp { width: Fraction::from_bp(300) };
        assert!(m.validate().is_err());
    }

    #[test]
    fn price_unchanged_when_calm_at_par() {
        let c = ConfidenceState::default();
        for mode in [AccessMode::Direct, AccessMode::Intermediated] {
            let n = update_secondary_price(&c, Amount::ZERO, Amount::dollars(100), Fraction::ZERO, mode, &PriceParams::default(), Support::default());
            assert_eq!(n.secondary_price, Fraction::ONE);
        }
    }

    #[test]
    fn intermediated_price_falls_with_failures_and_recovers() {
        let p = PriceParams::default();
        let c = ConfidenceState::default();
        let n = update_secondary_price(&c, Amount::dollars(1), Amount::dollars(100), Fraction::ZERO, AccessMode::Intermediated, &p, Support::default());
        assert_eq!(n.secondary_price, Fraction::from_bp(9_900));
        let r = update_secondary_price(&n, Amount::ZERO, Amount::dollars(100), Fraction::ZERO, AccessMode::Intermediated, &p, Support::default());
        assert_eq!(r.secondary_price, Fraction::from_bp(9_925));
    }

    #[test]
    fn shock_class_parsing() {
        assert_eq!("LivenessFault".parse::<ShockClass>().unwrap(), ShockClass::LivenessFault);
        assert_eq!("correlated_liveness".parse::<ShockClass>().unwrap(), ShockClass::CorrelatedLiveness);
        assert_eq!("meteor".parse::<ShockClass>(), Err(DynamicsError::UnknownShockClass("meteor".into())));
    }

    fn spec(class: ShockClass) -> ShockSpec {
        ShockSpec {
            class,
            likelihood: LikelihoodBand::Moderate,
            systemic: SystemicBand::High,
            magnitude: None,
            confidence: None,
            duration: 2,
            chain: "eth".into(),
            issuer: None,
            recipient: None,
            day: 4,
        }
    }

    #[test]
    fn correlated_fans_out_to_chain() {
        let chains = vec![
            (AgentId::issuer(0), vec!["eth".to_string()]),
            (AgentId::issuer(1), vec!["sol".to_string(), "eth".to_string()]),
            (AgentId::issuer(2), vec!["sol".to_string()]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = resolve_shock(&spec(ShockClass::CorrelatedLiveness), &chains, |_| Amount::ZERO, &mut rng);
        assert_eq!(e.issuers, vec![AgentId::issuer(0), AgentId::issuer(1)]);
        assert!(e.blocks_chain);
        assert_eq!(e.until, 5);
        let single = resolve_shock(&spec(ShockClass::LivenessFault), &chains, |_| Amount::ZERO, &mut rng);
        assert_eq!(single.issuers.len(), 1);
    }

    #[test]
    fn confidence_sample_within_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for band in [SystemicBand::High, SystemicBand::Medium, SystemicBand::Low] {
            let (lo, hi) = band.magnitude_range();
            for _ in 0..100 {
                let m = sample_magnitude(band, &mut rng);
                assert!(m >= lo && m <= hi);
            }
        }
        assert!(SystemicBand::High.magnitude_range().1 == Fraction::from_bp(3_000));
    }

    #[test]
    fn incentive_ratio_scales_with_supply() {
        let small = attack_incentive_ratio(Amount::dollars(1_000), Fraction::from_bp(100), Amount::dollars(50)).unwrap();
        let big = attack_incentive_ratio(Amount::dollars(10_000), Fraction::from_bp(100), Amount::dollars(50)).unwrap();
        assert!(big > small);
        assert_eq!(attack_incentive_ratio(Amount::dollars(1), Fraction::ONE, Amount::ZERO), None);
    }

    proptest! {
        #[test]
        fn sensitive_demand_dominates(
            base in 0i64..5_000, extra in 1i64..50_000, thr in 1i64..5_000,
            dev in 0i64..10_000, age in 0u32..10, coins in 0i64..1_000_000_000,
        ) {
            let m = RunModel::new(Fraction::from_bp(base), Fraction::from_bp(base + extra), Fraction::from_bp(thr)).unwrap();
            let d = Fraction::from_bp(dev);
            let c = Amount::from_minor(coins);
            let s = c.scale(m.rate_for(Sensitivity::Sensitive, d, age));
            let i = c.scale(m.rate_for(Sensitivity::Insensitive, d, age));
            prop_assert!(s >= i);
        }

        #[test]
        fn flip_back_requires_recovery_days(seq in proptest::collection::vec((0i64..600, 0u32..4), 1..40)) {
            let mut m = model();
            let mut calm = 0u32;
            for (dev, age) in seq {
                let before = m.state;
                let c = conf_at(dev, age);
                redemption_demand(&mut m, &c, Amount::dollars(1));
                if before == Sensitivity::Sensitive {
                    calm = if dev == 0 && age == 0 { calm + 1 } else { 0 };
                    if m.state == Sensitivity::Insensitive {
                        prop_assert!(calm >= m.recovery_days);
                        calm = 0;
                    }
                } else {
                    calm = 0;
                }
            }
        }
    }
}
