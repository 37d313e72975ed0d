//! Run configuration, read from TOML or JSON.
//!
//! Every table is optional and every key has a default, so an empty file is
//! a valid configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::experiments::{Figure, SweepSpec};
use crate::market::{profiles_from_block_sizes, sample_block_sizes, Market, MarketParams};
use crate::mining::{RaceConfig, RaceMode};
use crate::nash::SolverSettings;
use crate::pricing::PricingSettings;
use crate::table::Format;

pub const SEED_ENV: &str = "EDGECHAIN_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinersConfig {
    /// Explicit block sizes; overrides `count`.
    pub block_sizes: Option<Vec<f64>>,
    pub count: usize,
    /// Sampling seed; the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for MinersConfig {
    fn default() -> Self {
        Self {
            block_sizes: None,
            count: 100,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NashConfig {
    /// One price per miner.
    pub prices: Option<Vec<f64>>,
    /// Uniform price for every miner.
    pub price: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub demands: Vec<f64>,
    pub outside_power: f64,
    pub trials: u64,
    pub mode: RaceMode,
    pub difficulty_bits: u32,
    pub execution: Execution,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            demands: vec![100.0, 40.0, 60.0],
            outside_power: 0.0,
            trials: 100_000,
            mode: RaceMode::AnalyticRace,
            difficulty_bits: 8,
            execution: Execution::default(),
        }
    }
}

impl SimulateConfig {
    pub fn race(&self, seed: u64) -> RaceConfig {
        RaceConfig {
            demands: self.demands.clone(),
            outside_power: self.outside_power,
            trials: self.trials,
            seed,
            mode: self.mode,
            difficulty_bits: self.difficulty_bits,
            execution: self.execution,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub market: MarketParams,
    pub miners: MinersConfig,
    pub solver: SolverSettings,
    pub pricing: PricingSettings,
    pub output: OutputConfig,
    pub nash: NashConfig,
    pub simulate: SimulateConfig,
    pub sweep: SweepSpec,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        match &self.miners.block_sizes {
            Some(sizes) => {
                if sizes.is_empty() {
                    return Err(Error::invalid("miners.block_sizes", "must not be empty"));
                }
                profiles_from_block_sizes(sizes)?;
            }
            None => {
                if self.miners.count == 0 {
                    return Err(Error::invalid("miners.count", "must be >= 1"));
                }
            }
        }
        self.solver.validate()?;
        self.pricing.validate()?;
        if self.nash.prices.is_some() && self.nash.price.is_some() {
            return Err(Error::invalid("nash", "set either `prices` or `price`, not both"));
        }
        self.simulate.race(0).validate()?;
        for figure in [Figure::Fig2b, Figure::Fig4, Figure::Fig5a, Figure::Fig5b] {
            self.sweep.validate(figure)?;
        }
        if self
            .sweep
            .reward_miner_block_sizes
            .iter()
            .any(|&t| !(t.is_finite() && t > 0.0))
        {
            return Err(Error::invalid(
                "sweep.reward_miner_block_sizes",
                "block sizes must be finite and > 0",
            ));
        }
        Ok(())
    }

    /// Picks the run seed: flag, then config, then `EDGECHAIN_SEED`, then 0.
    pub fn resolve_seed(&self, flag: Option<u64>, env: Option<&str>) -> Result<u64> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match env {
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
            None => Ok(0),
        }
    }

    pub fn block_sizes(&self, seed: u64) -> Result<Vec<f64>> {
        match &self.miners.block_sizes {
            Some(sizes) => Ok(sizes.clone()),
            None => sample_block_sizes(self.miners.count, &self.market, self.miners.seed.unwrap_or(seed)),
        }
    }

    pub fn build_market(&self, seed: u64) -> Result<Market> {
        Market::from_block_sizes(self.market, &self.block_sizes(seed)?)
    }
}

fn parse(text: &str, path: &Path) -> Result<Config> {
    if text.trim().is_empty() {
        return Ok(Config::default());
    }
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let shown = path.display();
    if json {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("{shown}: {e}")))
    } else {
        toml::from_str(text).map_err(|e| Error::Config(format!("{shown}: {}", e.to_string().trim_end())))
    }
}

/// Reads and validates a configuration. JSON is chosen by a `.json`
/// extension, TOML otherwise.
pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let config = parse(&text, path)?;
    config.validate()?;
    Ok(config)
}
