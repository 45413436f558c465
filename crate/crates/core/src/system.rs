//! The simulated financial system: ledger, repo book, Treasury market,
//! issuer desks and the event log, owned together.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::events::EventLog;
use crate::instruments::RepoBook;
use crate::ledger::{AgentId, Day, Instrument, LedgerError, LedgerWorld, Op, SecurityClass};
use crate::market::{MarketParams, MarketState};
use crate::money::Amount;
use crate::settlement::{IntermediaryBehavior, IssuerDesk};

#[derive(Clone, Debug)]
pub struct System {
    pub world: LedgerWorld,
    pub repos: RepoBook,
    pub market: MarketState,
    pub desks: BTreeMap<AgentId, IssuerDesk>,
    pub events: EventLog,
    /// ChaCha8 stream seeded from the scenario seed.
    pub rng: ChaCha8Rng,
    pub intermediary_behavior: IntermediaryBehavior,
}

impl System {
    pub fn new(world: LedgerWorld, params: MarketParams, seed: u64) -> Self {
        System {
            world,
            repos: RepoBook::default(),
            market: MarketState::new(params),
            desks: BTreeMap::new(),
            events: EventLog::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            intermediary_behavior: IntermediaryBehavior::RedeemImmediately,
        }
    }

    /// Credit a depositor with new money: the Fed creates reserves for its
    /// bank and the bank credits the deposit.
    pub fn endow_deposit(&mut self, agent: AgentId, amount: Amount) -> Result<(), LedgerError> {
        let bank = self.world.bank_of(agent)?;
        self.world.apply(&[
            Op::Issue { creditor: bank, debtor: AgentId::FED, instrument: Instrument::Reserves, amount },
            Op::Issue { creditor: agent, debtor: bank, instrument: Instrument::Deposit, amount },
        ])
    }

    /// Give an agent Treasuries from outside the system.
    pub fn endow_treasury(&mut self, agent: AgentId, class: SecurityClass, maturity: Day, face: Amount) -> Result<(), LedgerError> {
        self.world.apply(&[Op::Endow { agent, class, maturity, face }])
    }

    /// Record coins already in circulation at the start of a run.
    pub fn endow_coins(&mut self, holder: AgentId, issuer: AgentId, amount: Amount) -> Result<(), LedgerError> {
        self.world.apply(&[Op::Issue {
            creditor: holder,
            debtor: issuer,
            instrument: Instrument::Stablecoin { issuer },
            amount,
        }])
    }
}
