//! Edge-compute pricing for proof-of-work miners.
//!
//! The provider leads by pricing compute; miners follow by buying demand in
//! a winner-take-all mining contest. [`nash`] solves the miners' sub-game,
//! [`pricing`] the provider's, and [`mining`] checks the contest success
//! function against simulated and hashed mining races.

pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod market;
pub mod mining;
pub mod nash;
pub mod pricing;
pub mod search;
pub mod table;

pub use error::{Error, Result};
pub use exec::Execution;
pub use market::{
    miner_utility, provider_profit, sample_block_sizes, valuation, win_probability, DemandProfile, Market,
    MarketParams, MinerProfile, PriceVector, PricingScheme,
};
pub use nash::{EquilibriumReport, SolverMethod, SolverSettings};
pub use pricing::{PricingSettings, StackelbergComparison, StackelbergSolution};
