//! Builds a [`System`] from a configuration and steps it through the
//! horizon.
//!
//! Each day runs the same phases in the same order:
//!
//! 1. shocks land and scheduled flows (sales, mints, surges) are submitted;
//! 2. holders request redemptions, directly or through intermediaries;
//! 3. issuers intervene on the secondary market;
//! 4. settlement batches due today post, and repo second legs roll or not;
//! 5. issuers pay their queues and launch any further funding legs;
//! 6. the Treasury market clears and schedules T+1 settlement;
//! 7. prices are re-marked, delays flagged and secondary prices updated;
//! 8. supply-shock burns run, analytics are recorded and the ledger audited.

use std::collections::BTreeMap;

use super::config::{bp, daily, share, ParPolicyKind, ScenarioConfig, TransitionKind, Units};
use super::output::{DailyRow, FlipRecord, IssuerSummary, MarketRow, RunOutput, Summary, Totals, VolumeReport};
use super::ScenarioError;
use crate::analytics::{leverage_ratio, liquidity_metrics, slr_lower_bound, slr_with_bound, LiquidityReport};
use crate::dynamics::{
    redemption_demand, resolve_shock, shock_price, update_secondary_price, PriceParams, RunModel, Sensitivity,
    ShockClass, ShockSpec, Support, Transition,
};
use crate::events::EventKind;
use crate::instruments::{book_existing_repo, PortfolioState, RepoTerms, TreasuryBill};
use crate::ledger::{AgentId, Day, Instrument, LedgerWorld, Op, SecurityClass};
use crate::market::{self, DealerChain, DealerState, MarketParams, SalePurpose};
use crate::money::{Amount, Fraction};
use crate::settlement::{self, AccessMode, IssuerDesk, ParPolicy, RedemptionRequest, Route, SettlementError};
use crate::system::System;

/// Coins minted by a supply shock, burned at the end of its last day.
#[derive(Clone, Debug)]
struct PendingBurn {
    issuer: AgentId,
    recipient: AgentId,
    amount: Amount,
    day: Day,
}

/// A scenario in progress. Use [`run`] for a whole horizon or drive it one
/// day at a time with [`Scenario::step`].
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub sys: System,
    daily: Vec<DailyRow>,
    market_rows: Vec<MarketRow>,
    burns: Vec<PendingBurn>,
    shock_ends: Vec<(usize, String, Day)>,
    flips: Vec<FlipRecord>,
    insolvency_day: Option<Day>,
    peak: (Fraction, Option<Day>, Option<AgentId>),
    capacity_range: Option<(Amount, Amount)>,
    min_long: Fraction,
    max_bill: Fraction,
    rejected: Amount,
    open_capacity: Amount,
}

fn setup_err(what: &str, e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Validation(format!("{what}: {e}"))
}

fn weight(x: f64) -> Amount {
    Amount::from_minor((x * 1e6).round() as i64)
}

fn market_params(cfg: &ScenarioConfig) -> MarketParams {
    let u = &cfg.units;
    let m = &cfg.market;
    let [kept, sold] = m.retention;
    MarketParams {
        depth: u.amount(m.depth),
        impact_coeff: bp(m.impact_coeff_bp),
        max_dislocation: bp(m.max_dislocation_bp),
        bill_impact_share: share(m.bill_impact_share),
        flight_to_safety: m.flight_to_safety,
        bill_rally_share: share(m.bill_rally_share),
        slr_bound: m.slr_bound_bp.map(bp),
        srf: cfg.policy.srf,
        eslr_extra: if cfg.policy.eslr_reform { u.amount(cfg.policy.eslr_extra_headroom) } else { Amount::ZERO },
        replacement_frac: share(m.replacement_frac),
        long_collateral_share: share(m.long_collateral_share),
        chain: DealerChain {
            length: m.chain_length,
            retention_num: (kept * 1000.0).round() as i64,
            retention_den: (sold * 1000.0).round() as i64,
        },
    }
}

fn run_model(cfg: &ScenarioConfig) -> Result<RunModel, ScenarioError> {
    let r = &cfg.run;
    let mut model = RunModel::new(bp(r.baseline_rate_bp), bp(r.shifted_rate_bp), bp(r.threshold_bp))
        .map_err(|e| setup_err("run", e))?;
    model.delay_trigger_days = r.delay_trigger_days;
    model.recovery_days = r.recovery_days;
    model.transition = match r.transition {
        TransitionKind::Step => Transition::Step,
        TransitionKind::Ramp => Transition::Ramp { width: bp(r.ramp_width_bp) },
    };
    model.validate().map_err(|e| setup_err("run", e))?;
    Ok(model)
}

/// Build the day-0 system: balance sheets, pre-existing repos, dealer and
/// lender registries and one desk per issuer.
pub fn build_system(cfg: &ScenarioConfig, seed: u64) -> Result<System, ScenarioError> {
    let u = &cfg.units;
    let mut world = LedgerWorld::new();
    for b in &cfg.banks {
        world.add_bank(b.id);
    }
    let depositors = cfg
        .dealers
        .iter()
        .map(|d| (d.id, d.bank))
        .chain(cfg.issuers.iter().map(|i| (i.id, i.bank)))
        .chain(cfg.intermediaries.iter().map(|i| (i.id, i.bank)))
        .chain(cfg.holders.iter().map(|h| (h.id, h.bank)))
        .chain(cfg.buyers.iter().map(|b| (b.id, b.bank)));
    for (id, bank) in depositors {
        world.add_depositor(id, bank);
    }
    if cfg.policy.issuer_reserve_access {
        for i in &cfg.issuers {
            world.grant_reserve_account(i.id);
        }
    }
    let mut sys = System::new(world, market_params(cfg), seed);
    sys.intermediary_behavior = cfg.policy.intermediary_behavior;
    fn err(what: &'static str) -> impl Fn(crate::ledger::LedgerError) -> ScenarioError {
        move |e| setup_err(what, e)
    }

    for b in &cfg.banks {
        let capital = u.amount(b.capital);
        if capital.is_positive() {
            sys.endow_treasury(b.id, SecurityClass::LongOffTheRun, 3_650, capital).map_err(err("bank capital"))?;
        }
    }
    for b in &cfg.buyers {
        sys.endow_deposit(b.id, u.amount(b.cash)).map_err(err("buyer cash"))?;
        sys.endow_treasury(b.id, SecurityClass::Bill, 30, u.amount(b.bills)).map_err(err("buyer bills"))?;
        sys.endow_treasury(b.id, SecurityClass::LongOffTheRun, 3_650, u.amount(b.long)).map_err(err("buyer long"))?;
        if b.lender {
            sys.market.lenders.push(b.id);
        }
    }
    for x in &cfg.intermediaries {
        sys.endow_deposit(x.id, u.amount(x.cash)).map_err(err("intermediary cash"))?;
    }
    for h in &cfg.holders {
        sys.endow_deposit(h.id, u.amount(h.cash)).map_err(err("holder cash"))?;
    }
    let first_lender = cfg.buyers.iter().find(|b| b.lender).map(|b| b.id);
    // dealer inventory: cash plus securities split long/bills; funded by
    // capital, issuer repos and a legacy repo from the first cash lender
    let mut issuer_repo: BTreeMap<AgentId, Amount> = BTreeMap::new();
    for i in &cfg.issuers {
        if i.repo_counterparties.is_empty() {
            continue;
        }
        let weights = vec![Amount::from_minor(1); i.repo_counterparties.len()];
        for (c, amt) in i.repo_counterparties.iter().zip(u.amount(i.allocations.repo).allocate(&weights)) {
            *issuer_repo.entry(*c).or_insert(Amount::ZERO) += amt;
        }
    }
    for d in &cfg.dealers {
        let assets = u.amount(d.assets);
        let cash = u.amount(d.cash);
        let securities = assets - cash;
        let long = securities.scale(share(d.long_share));
        sys.endow_deposit(d.id, cash).map_err(err("dealer cash"))?;
        sys.endow_treasury(d.id, SecurityClass::LongOffTheRun, d.long_maturity_days, long).map_err(err("dealer long"))?;
        sys.endow_treasury(d.id, SecurityClass::Bill, d.bill_maturity_days, securities - long).map_err(err("dealer bills"))?;
        let legacy = assets - u.amount(d.capital) - issuer_repo.get(&d.id).copied().unwrap_or(Amount::ZERO);
        if legacy.is_positive() {
            let lender = first_lender.ok_or_else(|| ScenarioError::Validation(format!("{}: no lender for legacy funding", d.id)))?;
            sys.world
                .apply(&[Op::Issue { creditor: lender, debtor: d.id, instrument: Instrument::Repo, amount: legacy }])
                .map_err(err("dealer funding"))?;
        }
        sys.market.dealers.insert(
            d.id,
            DealerState { exposures: u.amount(d.exposures), slr_bound: slr_lower_bound(d.gsib), reserve_access: u.amount(d.reserve_access) },
        );
    }

    let model = run_model(cfg)?;
    let policy = match cfg.policy.par_policy {
        ParPolicyKind::RigorousFixed => ParPolicy::RIGOROUS,
        ParPolicyKind::BestEffort => ParPolicy::BEST_EFFORT,
        ParPolicyKind::Corridor => ParPolicy::corridor(bp(cfg.policy.corridor_bp)).map_err(|e| setup_err("policy", e))?,
    };
    let price = PriceParams {
        delay_coeff: share(cfg.run.delay_price_coeff),
        recovery_per_day: bp(cfg.run.recovery_bp_per_day),
        intervention_impact: share(cfg.run.intervention_impact),
        floor: bp(cfg.run.price_floor_bp),
    };
    let haircut = bp(cfg.market.haircut_bp);
    let total_weight: Amount = cfg.holders.iter().map(|h| weight(h.weight)).sum();
    for i in &cfg.issuers {
        let a = &i.allocations;
        if cfg.policy.issuer_reserve_access {
            let amount = u.amount(a.deposits);
            sys.world
                .apply(&[Op::Issue { creditor: i.id, debtor: AgentId::FED, instrument: Instrument::Reserves, amount }])
                .map_err(err("issuer reserves"))?;
        } else {
            sys.endow_deposit(i.id, u.amount(a.deposits)).map_err(err("issuer deposits"))?;
        }
        sys.endow_treasury(i.id, SecurityClass::Bill, i.bill_maturity_days, u.amount(a.bills)).map_err(err("issuer bills"))?;
        sys.endow_treasury(i.id, SecurityClass::LongOffTheRun, i.long_maturity_days, u.amount(a.long))
            .map_err(err("issuer long"))?;
        let rate = daily(i.repo_rate_bp);
        if !i.repo_counterparties.is_empty() {
            let weights = vec![Amount::from_minor(1); i.repo_counterparties.len()];
            for (c, amt) in i.repo_counterparties.iter().zip(u.amount(a.repo).allocate(&weights)) {
                if !amt.is_positive() {
                    continue;
                }
                let terms = RepoTerms {
                    principal: amt,
                    haircut,
                    term_days: 1,
                    rate,
                    long_share: share(cfg.market.long_collateral_share),
                };
                book_existing_repo(&mut sys.world, &mut sys.repos, i.id, *c, terms)
                    .map_err(|e| setup_err(&format!("repo {} ← {c}", i.id), e))?;
            }
        }
        let coins = u.amount(i.coins);
        if coins.is_positive() {
            let weights: Vec<Amount> = cfg.holders.iter().map(|h| weight(h.weight)).collect();
            if total_weight.is_positive() {
                for (h, amt) in cfg.holders.iter().zip(coins.allocate(&weights)) {
                    if amt.is_positive() {
                        sys.endow_coins(h.id, i.id, amt).map_err(err("coins"))?;
                    }
                }
            }
        }
        let mut desk = IssuerDesk::new(i.id, model.clone());
        desk.policy = policy;
        desk.access = cfg.policy.access_mode;
        desk.chains = i.chains.clone();
        desk.genius_compliant = i.genius_compliant;
        desk.price = price;
        desk.r_t = daily(i.treasury_yield_bp);
        desk.mint_floor = daily(cfg.policy.negative_carry_floor_bp);
        desk.repo_rate = rate;
        desk.eligible.extend(i.eligible.iter().copied());
        if desk.access == AccessMode::Intermediated {
            desk.eligible.extend(cfg.intermediaries.iter().map(|x| x.id));
        }
        sys.desks.insert(i.id, desk);
    }
    let audit = sys.world.audit();
    if !audit.passed() {
        return Err(ScenarioError::AuditFailure { day: 0, report: audit.to_string() });
    }
    Ok(sys)
}

impl Scenario {
    /// Validate and build. `seed` overrides the configured seed.
    pub fn new(mut config: ScenarioConfig, seed: Option<u64>) -> Result<Self, ScenarioError> {
        config.validate()?;
        config.canonicalize();
        if let Some(s) = seed {
            config.seed = s;
        }
        let sys = build_system(&config, config.seed)?;
        Ok(Scenario {
            config,
            sys,
            daily: Vec::new(),
            market_rows: Vec::new(),
            burns: Vec::new(),
            shock_ends: Vec::new(),
            flips: Vec::new(),
            insolvency_day: None,
            peak: (Fraction::ZERO, None, None),
            capacity_range: None,
            min_long: Fraction::ONE,
            max_bill: Fraction::ONE,
            rejected: Amount::ZERO,
            open_capacity: Amount::ZERO,
        })
    }

    pub fn today(&self) -> Day {
        self.sys.world.today()
    }

    pub fn is_done(&self) -> bool {
        self.today() >= self.config.horizon_days
    }

    pub fn units(&self) -> &Units {
        &self.config.units
    }

    /// Run one business day.
    pub fn step(&mut self) -> Result<(), ScenarioError> {
        let sys = &mut self.sys;
        sys.world.advance_day();
        sys.market.begin_day();
        for d in sys.desks.values_mut() {
            d.today = Default::default();
        }
        let today = sys.world.today();
        self.open_capacity = market::capacity(sys);

        self.apply_shocks(today);
        self.scheduled_flows(today);
        let mut surges = self.surges(today);
        self.demand(today, &mut surges);
        let bought = self.intervene();

        let sys = &mut self.sys;
        market::settle_due(sys);
        market::process_second_legs(sys);
        let issuers: Vec<AgentId> = sys.desks.keys().copied().collect();
        for i in &issuers {
            settlement::pay_queue(sys, *i);
            settlement::fund_shortfall(sys, *i);
        }
        market::clear_market(sys);
        for call in market::update_marks(sys) {
            sys.events.push(
                &mut sys.world,
                EventKind::MarginCall {
                    repo: call.repo_id,
                    borrower: call.borrower,
                    collateral_value: call.collateral_value,
                    floor: call.floor,
                },
            );
        }
        for i in &issuers {
            settlement::mark_delays(sys, *i);
            let d = sys.desks.get_mut(i).expect("desk");
            // escrowed coins still count as claims on the issuer
            let coins = sys.world.coins_outstanding(*i) + d.unpaid();
            let failing = d.failing(today);
            let support = Support { bought: bought.get(i).copied().unwrap_or(Amount::ZERO), shock_active: d.shock_active(today) };
            d.conf = update_secondary_price(&d.conf, failing, coins, Fraction::ZERO, d.access, &d.price, support);
            let live: Vec<u64> = d.non_roll.iter().copied().filter(|id| sys.repos.get(*id).is_some()).collect();
            d.non_roll = live.into_iter().collect();
        }
        self.end_of_day(today);
        self.record(today);

        let report = self.sys.world.audit();
        if !report.passed() {
            let detail = report.first_failure().map(|c| c.detail.clone()).unwrap_or_default();
            self.sys.events.push(&mut self.sys.world, EventKind::AuditFailed { detail });
            return Err(ScenarioError::AuditFailure { day: today, report: report.to_string() });
        }
        Ok(())
    }

    fn shock_spec(&self, n: usize) -> ShockSpec {
        let s = &self.config.shocks[n];
        let class: ShockClass = s.class.parse().expect("validated");
        let magnitude = match class {
            ShockClass::ConfidenceOnly => s.magnitude.map(bp),
            _ => s.magnitude.map(share),
        };
        ShockSpec {
            class,
            likelihood: s.likelihood.parse().expect("validated"),
            systemic: s.systemic.parse().expect("validated"),
            magnitude,
            confidence: s.confidence_bp.map(bp),
            duration: s.duration,
            chain: s.chain.clone(),
            issuer: s.issuer,
            recipient: s.recipient,
            day: s.day,
        }
    }

    fn apply_shocks(&mut self, today: Day) {
        for n in 0..self.config.shocks.len() {
            if self.config.shocks[n].day != today {
                continue;
            }
            let spec = self.shock_spec(n);
            let sys = &mut self.sys;
            let chains: Vec<(AgentId, Vec<String>)> = sys.desks.values().map(|d| (d.id, d.chains.clone())).collect();
            let world = &sys.world;
            let effect = resolve_shock(&spec, &chains, |i| world.coins_outstanding(i), &mut sys.rng);
            sys.events.push(
                &mut sys.world,
                EventKind::ShockStarted {
                    shock: n,
                    class: spec.class.label().into(),
                    issuers: effect.issuers.clone(),
                    price_effect: effect.price_effect,
                    until: effect.until,
                },
            );
            for issuer in &effect.issuers {
                let d = sys.desks.get_mut(issuer).expect("validated issuer");
                if effect.blocks_chain {
                    d.blocked_until = Some(d.blocked_until.map_or(effect.until, |u| u.max(effect.until)));
                }
                if !effect.price_effect.is_zero() {
                    d.shock_effect = effect.price_effect;
                    d.shock_active_until = Some(d.shock_active_until.map_or(effect.until, |u| u.max(effect.until)));
                    d.conf = shock_price(&d.conf, effect.price_effect, n, &d.price);
                }
            }
            if let (Some((recipient, amount)), Some(issuer)) = (effect.mint, effect.issuers.first().copied()) {
                if amount.is_positive() {
                    let op = Op::Issue { creditor: recipient, debtor: issuer, instrument: Instrument::Stablecoin { issuer }, amount };
                    if sys.world.apply(&[op]).is_ok() {
                        sys.events.push(&mut sys.world, EventKind::SupplyMinted { issuer, recipient, amount });
                        self.burns.push(PendingBurn { issuer, recipient, amount, day: effect.until });
                    }
                }
            }
            self.shock_ends.push((n, spec.class.label().to_string(), effect.until));
        }
    }

    fn scheduled_flows(&mut self, today: Day) {
        let u = self.config.units.clone();
        let sys = &mut self.sys;
        for s in self.config.sales.iter().filter(|s| s.day == today) {
            let face = u.amount(s.amount);
            if face.is_positive() {
                market::submit_order(sys, s.seller, s.class, face, SalePurpose::Exogenous);
            }
        }
        for m in self.config.mints.iter().filter(|m| m.day == today) {
            let amount = u.amount(m.amount);
            match settlement::mint(sys, m.issuer, m.buyer, amount, m.bills_from) {
                Ok(()) | Err(SettlementError::MintDeclined(_)) => {}
                Err(e) => sys.events.push(
                    &mut sys.world,
                    EventKind::LegFailed { issuer: m.issuer, request: None, leg: "mint".into(), cause: e.to_string() },
                ),
            }
        }
    }

    /// Coins of one issuer held by the redeeming population: holders with
    /// positive weight, plus intermediaries' inventory.
    fn holder_coins(&self, issuer: AgentId) -> Amount {
        let w = &self.sys.world;
        let holders: Amount =
            self.config.holders.iter().filter(|h| h.weight > 0.0).map(|h| w.coins_held(h.id, issuer)).sum();
        let inventory: Amount = self.config.intermediaries.iter().map(|x| w.coins_held(x.id, issuer)).sum();
        holders + inventory
    }

    /// One-off redemption waves due today, per issuer.
    fn surges(&self, today: Day) -> BTreeMap<AgentId, Amount> {
        let mut out = BTreeMap::new();
        for r in self.config.redemptions.iter().filter(|r| r.day == today) {
            let coins = self.holder_coins(r.issuer);
            *out.entry(r.issuer).or_insert(Amount::ZERO) += coins.scale(share(r.share));
        }
        out
    }

    fn demand(&mut self, today: Day, surges: &mut BTreeMap<AgentId, Amount>) {
        let holders: Vec<(AgentId, Amount)> = self.config.holders.iter().map(|h| (h.id, weight(h.weight))).collect();
        let intermediaries: Vec<AgentId> = self.config.intermediaries.iter().map(|x| x.id).collect();
        let issuers: Vec<AgentId> = self.sys.desks.keys().copied().collect();
        for issuer in issuers {
            let coins = self.holder_coins(issuer);
            let sys = &mut self.sys;
            let d = sys.desks.get_mut(&issuer).expect("desk");
            let demand = redemption_demand(&mut d.run, &d.conf, coins);
            if let Some(state) = demand.flipped {
                let sensitive = state == Sensitivity::Sensitive;
                self.flips.push(FlipRecord { day: today, issuer, sensitive });
                sys.events.push(&mut sys.world, EventKind::RegimeFlip { issuer, sensitive });
            }
            let total = demand.amount + surges.remove(&issuer).unwrap_or(Amount::ZERO);
            if !total.is_positive() || holders.is_empty() {
                continue;
            }
            let weights: Vec<Amount> = holders.iter().map(|(_, w)| *w).collect();
            for ((holder, _), want) in holders.iter().zip(total.allocate(&weights)) {
                let amount = want.min(self.sys.world.coins_held(*holder, issuer));
                if amount.is_positive() {
                    self.holder_exit(today, issuer, *holder, amount, &intermediaries);
                }
            }
        }
    }

    fn holder_exit(&mut self, today: Day, issuer: AgentId, holder: AgentId, amount: Amount, intermediaries: &[AgentId]) {
        let sys = &mut self.sys;
        if sys.desks[&issuer].may_redeem_directly(holder) {
            self.redeem(today, issuer, holder, amount, Route::Direct);
            return;
        }
        let price = sys.desks[&issuer].conf.secondary_price;
        let cost = amount.scale(price);
        let Some(buyer) = intermediaries.iter().copied().find(|x| sys.world.cash(*x) >= cost) else {
            self.rejected += amount;
            sys.desks.get_mut(&issuer).expect("desk").today.rejected += amount;
            sys.events.push(
                &mut sys.world,
                EventKind::RedemptionRejected { issuer, holder, amount, reason: "no intermediary bid".into() },
            );
            return;
        };
        if settlement::sell_to_intermediary(sys, holder, buyer, issuer, amount).is_err() {
            return;
        }
        if sys.intermediary_behavior == settlement::IntermediaryBehavior::RedeemImmediately {
            self.redeem(today, issuer, buyer, amount, Route::ViaIntermediary);
        }
    }

    fn redeem(&mut self, today: Day, issuer: AgentId, holder: AgentId, amount: Amount, route: Route) {
        let sys = &mut self.sys;
        let req = RedemptionRequest { holder, amount, submitted: today, route };
        let result = settlement::plan_redemption(sys, issuer, req).and_then(|plan| settlement::execute_plan(sys, &plan));
        match result {
            Ok(_) | Err(SettlementError::LegFailed { .. }) => {}
            Err(e) => {
                self.rejected += amount;
                sys.desks.get_mut(&issuer).expect("desk").today.rejected += amount;
                sys.events.push(&mut sys.world, EventKind::RedemptionRejected { issuer, holder, amount, reason: e.to_string() });
            }
        }
    }

    fn intervene(&mut self) -> BTreeMap<AgentId, Amount> {
        let sys = &mut self.sys;
        let mut bought = BTreeMap::new();
        let issuers: Vec<AgentId> = sys.desks.keys().copied().collect();
        for i in issuers {
            let d = &sys.desks[&i];
            if d.access != AccessMode::Intermediated {
                continue;
            }
            let coins = sys.world.coins_outstanding(i);
            let actions = settlement::intervene(&d.policy, d.conf.secondary_price, coins, d.price.intervention_impact);
            if !actions.is_empty() {
                bought.insert(i, settlement::execute_intervention(sys, i, &actions));
            }
        }
        bought
    }

    fn end_of_day(&mut self, today: Day) {
        let sys = &mut self.sys;
        let (due, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut self.burns).into_iter().partition(|b| b.day <= today);
        self.burns = keep;
        for b in due {
            let amount = sys.world.coins_held(b.recipient, b.issuer).min(b.amount);
            if amount.is_positive() {
                let op = Op::Extinguish {
                    creditor: b.recipient,
                    debtor: b.issuer,
                    instrument: Instrument::Stablecoin { issuer: b.issuer },
                    amount,
                };
                if sys.world.apply(&[op]).is_ok() {
                    sys.events.push(&mut sys.world, EventKind::SupplyBurned { issuer: b.issuer, recipient: b.recipient, amount });
                }
            }
        }
        let (ended, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut self.shock_ends).into_iter().partition(|(_, _, u)| *u <= today);
        self.shock_ends = keep;
        for (shock, class, _) in ended {
            sys.events.push(&mut sys.world, EventKind::ShockEnded { shock, class });
        }
        for d in sys.desks.values_mut() {
            if d.shock_active_until.is_some_and(|u| u <= today) {
                d.shock_active_until = None;
                d.shock_effect = Fraction::ZERO;
            }
        }
    }

    fn issuer_liquidity(&self, issuer: AgentId) -> LiquidityReport {
        let sys = &self.sys;
        let Ok(sheet) = sys.world.sheet(issuer) else { return LiquidityReport::EMPTY };
        let mut treasuries = Vec::new();
        for class in SecurityClass::ALL {
            for (maturity, face) in sheet.treasury_lots(class) {
                treasuries.push(TreasuryBill { face, maturity_day: maturity, market_price: sys.world.marks.get(class), on_the_run: false });
            }
        }
        let portfolio = PortfolioState {
            treasuries,
            deposits: sys.world.cash(issuer),
            r_t: Fraction::ZERO,
            r_d: Fraction::ZERO,
            repo: sys.repos.lent_by(issuer).into_iter().cloned().collect(),
        };
        liquidity_metrics(&portfolio, sys.world.today())
    }

    fn record(&mut self, today: Day) {
        let sys = &self.sys;
        let marks = sys.world.marks;
        for (id, state) in &sys.market.dealers {
            let sheet = sys.world.sheet(*id).expect("dealer exists");
            let assets = sheet.total_assets(&marks);
            let equity = sheet.equity(&marks);
            let bound = sys.market.params.slr_bound.unwrap_or(state.slr_bound);
            let slr = slr_with_bound(equity, assets, state.exposures, bound).ok().map(|r| r.slr);
            self.daily.push(DailyRow {
                day: today,
                agent: *id,
                equity,
                slr,
                slr_bound: Some(bound),
                headroom: Some(market::dealer_headroom(sys, *id)),
                ..DailyRow::empty(today, *id)
            });
        }
        let issuers: Vec<AgentId> = sys.desks.keys().copied().collect();
        for id in issuers {
            let liq = self.issuer_liquidity(id);
            let sys = &self.sys;
            let d = &sys.desks[&id];
            let sheet = sys.world.sheet(id).expect("issuer exists");
            let assets = sheet.total_assets(&marks);
            let equity = sheet.equity(&marks);
            let lev = leverage_ratio(assets, sheet.total_liabilities()).ok();
            let coins = sys.world.coins_outstanding(id);
            if equity.is_negative() && self.insolvency_day.is_none() {
                self.insolvency_day = Some(today);
            }
            let dev = d.conf.deviation();
            if dev > self.peak.0 {
                self.peak = (dev, Some(today), Some(id));
            }
            self.daily.push(DailyRow {
                equity,
                leverage: lev.map(|l| l.ratio),
                band: lev.map(|l| l.band),
                dla: Some(liq.dla),
                wla: Some(liq.wla),
                wam: Some(liq.wam_days),
                wal: Some(liq.wal_days),
                price: Some(d.conf.secondary_price),
                coins: Some(coins),
                requested: Some(d.today.requested),
                filled: Some(d.today.filled),
                delayed: Some(d.today.delayed),
                regime: Some(d.run.state),
                ..DailyRow::empty(today, id)
            });
        }
        let sys = &self.sys;
        let md = &sys.market.today;
        let cap = self.open_capacity;
        self.capacity_range = Some(match self.capacity_range {
            None => (cap, cap),
            Some((lo, hi)) => (lo.min(cap), hi.max(cap)),
        });
        self.min_long = self.min_long.min(marks.long);
        self.max_bill = self.max_bill.max(marks.bill);
        for class in SecurityClass::ALL {
            let c = md.class(class);
            self.market_rows.push(MarketRow {
                day: today,
                class,
                price: marks.get(class),
                submitted: c.submitted,
                fills: c.fills,
                unfilled: c.unfilled,
                capacity: cap,
                srf_draws: md.srf_draws,
            });
        }
    }

    /// Run to the horizon and assemble the output.
    pub fn run_to_end(mut self) -> Result<RunOutput, ScenarioError> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> RunOutput {
        let sys = &self.sys;
        let u = &self.config.units;
        let desks = sys.desks.values();
        let totals = Totals {
            requested: self.daily.iter().filter_map(|r| r.requested).sum(),
            filled: self.daily.iter().filter_map(|r| r.filled).sum(),
            delayed: desks.clone().map(|d| d.delayed_total).sum(),
            rejected: self.rejected,
            bought: desks.clone().map(|d| d.retired).sum::<Amount>() - self.daily.iter().filter_map(|r| r.filled).sum(),
            minted: desks.clone().map(|d| d.minted).sum(),
            srf_draws: sys.market.srf_total,
            unpaid: desks.clone().map(|d| d.unpaid()).sum(),
        };
        let max_delay_days = desks.clone().map(|d| d.max_delay_days).max().unwrap_or(0);
        let issuers: Vec<IssuerSummary> = desks
            .map(|d| {
                let prices = self.daily.iter().filter(|r| r.agent == d.id).filter_map(|r| r.price);
                IssuerSummary {
                    id: d.id,
                    coins: u.to_f64(sys.world.coins_outstanding(d.id)),
                    equity: u.to_f64(sys.world.equity(d.id).unwrap_or(Amount::ZERO)),
                    final_price: d.conf.secondary_price.as_f64(),
                    min_price: prices.min().unwrap_or(Fraction::ONE).as_f64(),
                    delayed: u.to_f64(d.delayed_total),
                    max_delay_days: d.max_delay_days,
                    regime: d.run.state,
                }
            })
            .collect();
        let (min_cap, max_cap) = self.capacity_range.unwrap_or((Amount::ZERO, Amount::ZERO));
        let summary = Summary {
            name: self.config.name.clone(),
            seed: self.config.seed,
            horizon_days: self.config.horizon_days,
            unit: u.label.clone(),
            peak_deviation_bp: self.peak.0.ppm() as f64 / 100.0,
            peak_deviation_day: self.peak.1,
            peak_deviation_issuer: self.peak.2,
            max_delay_days,
            insolvency_day: self.insolvency_day,
            requested: u.to_f64(totals.requested),
            filled: u.to_f64(totals.filled),
            delayed: u.to_f64(totals.delayed),
            rejected: u.to_f64(totals.rejected),
            bought: u.to_f64(totals.bought),
            minted: u.to_f64(totals.minted),
            unpaid: u.to_f64(totals.unpaid),
            srf_draws: u.to_f64(totals.srf_draws),
            min_capacity: u.to_f64(min_cap),
            max_capacity: u.to_f64(max_cap),
            min_long_price: self.min_long.as_f64(),
            max_bill_price: self.max_bill.as_f64(),
            submitted_volume: VolumeReport::new(&sys.market.submitted_volume, u),
            filled_volume: VolumeReport::new(&sys.market.filled_volume, u),
            regime_flips: self.flips.clone(),
            issuers,
            events: sys.events.len(),
        };
        RunOutput {
            config: self.config.clone(),
            daily: self.daily,
            market: self.market_rows,
            summary,
            totals,
            min_capacity: min_cap,
            max_capacity: max_cap,
            events: self.sys.events.clone(),
        }
    }
}

/// Run a whole scenario.
pub fn run(config: &ScenarioConfig, seed: Option<u64>) -> Result<RunOutput, ScenarioError> {
    Scenario::new(config.clone(), seed)?.run_to_end()
}
