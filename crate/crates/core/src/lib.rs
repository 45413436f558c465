//! Deterministic balance-sheet simulator for stablecoin issuers and the
//! banks, broker-dealers and central bank around them.

pub mod analytics;
pub mod dynamics;
pub mod events;
pub mod instruments;
pub mod ledger;
pub mod market;
pub mod money;
pub mod scenario;
pub mod settlement;
pub mod system;
