//! Parameter sweeps behind the numerical studies: demand and profit versus
//! the number of miners (`fig4`), prices versus fixed and variable reward
//! (`fig5a`, `fig5b`), and win probability versus own demand for the
//! prototype's fixed-rival settings (`fig2b`).
//!
//! Sweep points run in parallel; rows are emitted in a fixed order, so a
//! table depends only on its [`SweepSpec`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::market::{sample_block_sizes, Market, MarketParams, PriceVector};
use crate::mining::{simulate_race, RaceConfig};
use crate::nash::{solve_nash, verify_equilibrium, SolverSettings};
use crate::pricing::{stackelberg_solve, PricingSettings, StackelbergComparison, StackelbergSolution};
use crate::table::Table;

pub const FIG4_HEADER: [&str; 7] = [
    "N",
    "mu_t",
    "scheme",
    "price_mean",
    "total_demand",
    "provider_profit",
    "status",
];
pub const FIG5A_HEADER: [&str; 7] = ["R", "miner_id", "block_size", "price", "demand", "utility", "status"];
pub const FIG5B_HEADER: [&str; 7] = ["r", "miner_id", "block_size", "price", "demand", "utility", "status"];
pub const FIG2B_HEADER: [&str; 6] = [
    "case",
    "miner_demand",
    "empirical_prob",
    "analytic_prob",
    "trials",
    "ci95",
];

/// Rival demands held fixed in the two prototype cases.
pub const PROTOTYPE_CASES: [(&str, &[f64]); 2] = [("3miners", &[40.0, 60.0]), ("4miners", &[40.0, 50.0, 60.0])];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Figure {
    Fig2b,
    Fig4,
    Fig5a,
    Fig5b,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig2b => "fig2b",
            Figure::Fig4 => "fig4",
            Figure::Fig5a => "fig5a",
            Figure::Fig5b => "fig5b",
        }
    }
}

impl std::str::FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig2b" => Ok(Figure::Fig2b),
            "fig4" => Ok(Figure::Fig4),
            "fig5a" => Ok(Figure::Fig5a),
            "fig5b" => Ok(Figure::Fig5b),
            other => Err(Error::invalid("figure", format!("unknown figure `{other}`"))),
        }
    }
}

fn stepped(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as usize;
    (0..=n).map(|k| start + step * k as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Taken from the resolved run seed, never from the sweep table.
    #[serde(skip)]
    pub seed: u64,
    /// `fig4`: miner counts.
    pub miner_counts: Vec<usize>,
    /// `fig4`: mean block sizes.
    pub block_size_means: Vec<f64>,
    /// `fig5a`/`fig5b`: the three miners' block sizes.
    pub reward_miner_block_sizes: Vec<f64>,
    pub fixed_rewards: Vec<f64>,
    pub variable_reward_rates: Vec<f64>,
    /// `fig2b`: demand of the varying miner.
    pub varying_demands: Vec<f64>,
    pub trials: u64,
    #[serde(skip_serializing)]
    pub execution: Execution,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            miner_counts: (1..=100).map(|k| 2 * k).collect(),
            block_size_means: vec![150.0, 200.0, 250.0],
            reward_miner_block_sizes: vec![150.0, 175.0, 200.0],
            fixed_rewards: stepped(5000.0, 15000.0, 1000.0),
            variable_reward_rates: stepped(0.0, 40.0, 2.0),
            varying_demands: stepped(10.0, 100.0, 10.0),
            trials: 100_000,
            execution: Execution::default(),
        }
    }
}

fn increasing<T: PartialOrd + Copy>(field: &str, xs: &[T]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::invalid(format!("sweep.{field}"), "must not be empty"));
    }
    if xs
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
    {
        return Err(Error::invalid(format!("sweep.{field}"), "must be strictly increasing"));
    }
    Ok(())
}

impl SweepSpec {
    pub fn validate(&self, figure: Figure) -> Result<()> {
        match figure {
            Figure::Fig4 => {
                increasing("miner_counts", &self.miner_counts)?;
                if self.miner_counts[0] == 0 {
                    return Err(Error::invalid("sweep.miner_counts", "counts must be >= 1"));
                }
                increasing("block_size_means", &self.block_size_means)
            }
            Figure::Fig5a | Figure::Fig5b => {
                if self.reward_miner_block_sizes.is_empty() {
                    return Err(Error::invalid("sweep.reward_miner_block_sizes", "must not be empty"));
                }
                if figure == Figure::Fig5a {
                    increasing("fixed_rewards", &self.fixed_rewards)
                } else {
                    increasing("variable_reward_rates", &self.variable_reward_rates)
                }
            }
            Figure::Fig2b => {
                increasing("varying_demands", &self.varying_demands)?;
                if self.trials == 0 {
                    return Err(Error::invalid("sweep.trials", "must be >= 1"));
                }
                Ok(())
            }
        }
    }
}

/// Everything a sweep needs besides its ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepContext<'a> {
    pub market: &'a MarketParams,
    pub solver: &'a SolverSettings,
    pub pricing: &'a PricingSettings,
}

fn error_status(e: &Error) -> &'static str {
    match e {
        Error::InfeasibleMarket(_) => "infeasible_market",
        Error::NotConverged { .. } => "not_converged",
        Error::MultipleEquilibria { .. } => "multiple_equilibria",
        Error::InvalidParam { .. } => "invalid_parameters",
        _ => "error",
    }
}

/// Re-asserts the pricing invariants on a solved instance. Returns `"ok"`
/// or the name of the first failed check.
pub fn audit(
    cmp: &StackelbergComparison,
    market: &Market,
    solver: &SolverSettings,
    pricing: &PricingSettings,
) -> &'static str {
    let solutions: [&StackelbergSolution; 2] = [&cmp.uniform, &cmp.discriminatory];
    for s in solutions {
        if !s.feasible || s.equilibrium.utilities.iter().any(|&u| u < -pricing.ir_tolerance) {
            return "check_failed_ir";
        }
        if !verify_equilibrium(&s.equilibrium, &s.prices, market, solver).passed {
            return "check_failed_nash";
        }
    }
    if !cmp.dp_dominates() {
        return "check_failed_dp_below_up";
    }
    "ok"
}

/// `fig4`: Stackelberg optimum for each mean block size and miner count.
/// Block sizes come from a single seeded stream, so a larger market
/// extends a smaller one and every mean shares the same normal draws.
pub fn sweep_miners(spec: &SweepSpec, ctx: SweepContext<'_>) -> Result<Table> {
    spec.validate(Figure::Fig4)?;
    let points: Vec<(f64, usize)> = spec
        .block_size_means
        .iter()
        .flat_map(|&mu| spec.miner_counts.iter().map(move |&n| (mu, n)))
        .collect();
    let solved = exec::map(spec.execution, &points, |&(mu, n)| {
        let params = MarketParams {
            block_size_mean: mu,
            ..*ctx.market
        };
        let market = sample_block_sizes(n, &params, spec.seed).and_then(|s| Market::from_block_sizes(params, &s))?;
        let cmp = stackelberg_solve(&market, ctx.pricing, ctx.solver)?;
        let status = audit(&cmp, &market, ctx.solver, ctx.pricing);
        Ok::<_, Error>((cmp, status))
    });
    let mut table = Table::new(&FIG4_HEADER);
    for (&(mu, n), result) in points.iter().zip(solved) {
        match result {
            Ok((cmp, status)) => {
                for s in [&cmp.uniform, &cmp.discriminatory] {
                    table.push(vec![
                        n.into(),
                        mu.into(),
                        s.scheme.name().into(),
                        s.prices.mean().into(),
                        s.equilibrium.demands.total().into(),
                        s.provider_profit.into(),
                        status.into(),
                    ]);
                }
            }
            Err(e) => {
                for scheme in ["uniform", "discriminatory"] {
                    table.push(vec![
                        n.into(),
                        mu.into(),
                        scheme.into(),
                        f64::NAN.into(),
                        f64::NAN.into(),
                        f64::NAN.into(),
                        error_status(&e).into(),
                    ]);
                }
            }
        }
    }
    Ok(table)
}

fn reward_rows(
    values: &[f64],
    spec: &SweepSpec,
    ctx: SweepContext<'_>,
    apply: impl Fn(f64) -> MarketParams + Sync,
    header: &[&'static str],
) -> Result<Table> {
    let sizes = &spec.reward_miner_block_sizes;
    let solved = exec::map(spec.execution, values, |&v| {
        let params = apply(v);
        let market = Market::from_block_sizes(params, sizes)?;
        let cmp = stackelberg_solve(&market, ctx.pricing, ctx.solver)?;
        let status = audit(&cmp, &market, ctx.solver, ctx.pricing);
        Ok::<_, Error>((cmp, status))
    });
    let mut table = Table::new(header);
    for (&v, result) in values.iter().zip(solved) {
        for (i, &t) in sizes.iter().enumerate() {
            let row = match &result {
                Ok((cmp, status)) => {
                    let dp = &cmp.discriminatory;
                    vec![
                        v.into(),
                        i.into(),
                        t.into(),
                        dp.prices.prices[i].into(),
                        dp.equilibrium.demands.demands()[i].into(),
                        dp.equilibrium.utilities[i].into(),
                        (*status).into(),
                    ]
                }
                Err(e) => vec![
                    v.into(),
                    i.into(),
                    t.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    error_status(e).into(),
                ],
            };
            table.push(row);
        }
    }
    Ok(table)
}

/// `fig5a`: discriminatory prices of the three-miner market versus `R`.
pub fn sweep_fixed_reward(spec: &SweepSpec, ctx: SweepContext<'_>) -> Result<Table> {
    spec.validate(Figure::Fig5a)?;
    reward_rows(
        &spec.fixed_rewards,
        spec,
        ctx,
        |r| MarketParams {
            fixed_reward: r,
            ..*ctx.market
        },
        &FIG5A_HEADER,
    )
}

/// `fig5b`: discriminatory prices and demands versus `r`.
pub fn sweep_variable_reward(spec: &SweepSpec, ctx: SweepContext<'_>) -> Result<Table> {
    spec.validate(Figure::Fig5b)?;
    reward_rows(
        &spec.variable_reward_rates,
        spec,
        ctx,
        |r| MarketParams {
            variable_reward_rate: r,
            ..*ctx.market
        },
        &FIG5B_HEADER,
    )
}

/// Seed for one prototype grid point; distinct per case and demand index.
pub fn prototype_seed(seed: u64, case: usize, index: usize) -> u64 {
    let key = (case as u64) << 32 | index as u64;
    seed ^ key.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Empirical and analytic win probability of the varying miner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrototypePoint {
    pub empirical: f64,
    pub analytic: f64,
    pub ci95: f64,
    pub trials: u64,
}

impl PrototypePoint {
    pub fn sigma(&self) -> f64 {
        (self.analytic * (1.0 - self.analytic) / self.trials as f64).sqrt()
    }
}

pub fn prototype_point(
    demand: f64,
    fixed: &[f64],
    trials: u64,
    seed: u64,
    execution: Execution,
) -> Result<PrototypePoint> {
    let mut demands = vec![demand];
    demands.extend_from_slice(fixed);
    let config = RaceConfig {
        execution,
        ..RaceConfig::analytic(demands, trials, seed)
    };
    let stats = simulate_race(&config)?;
    Ok(PrototypePoint {
        empirical: stats.empirical_prob[0],
        analytic: stats.analytic_prob[0],
        ci95: stats.ci95[0],
        trials,
    })
}

/// `fig2b`: win probability of one miner against fixed rivals.
pub fn reproduce_prototype_curve(spec: &SweepSpec) -> Result<Table> {
    spec.validate(Figure::Fig2b)?;
    let mut table = Table::new(&FIG2B_HEADER);
    for (c, (name, fixed)) in PROTOTYPE_CASES.iter().enumerate() {
        for (k, &x) in spec.varying_demands.iter().enumerate() {
            let p = prototype_point(x, fixed, spec.trials, prototype_seed(spec.seed, c, k), spec.execution)?;
            table.push(vec![
                (*name).into(),
                x.into(),
                p.empirical.into(),
                p.analytic.into(),
                p.trials.into(),
                p.ci95.into(),
            ]);
        }
    }
    Ok(table)
}

pub fn run_sweep(figure: Figure, spec: &SweepSpec, ctx: SweepContext<'_>) -> Result<Table> {
    match figure {
        Figure::Fig2b => reproduce_prototype_curve(spec),
        Figure::Fig4 => sweep_miners(spec, ctx),
        Figure::Fig5a => sweep_fixed_reward(spec, ctx),
        Figure::Fig5b => sweep_variable_reward(spec, ctx),
    }
}

/// Stage II total demand of `n` identical miners at a fixed uniform price.
pub fn fixed_price_total_demand(n: usize, block_size: f64, price: f64, ctx: SweepContext<'_>) -> Result<f64> {
    let market = Market::from_block_sizes(*ctx.market, &vec![block_size; n])?;
    let report = solve_nash(&PriceVector::uniform(price, n), &market, ctx.solver)?;
    Ok(report.demands.total())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepMetadata<'a> {
    pub figure: &'static str,
    pub seed: u64,
    pub version: &'static str,
    pub spec: &'a SweepSpec,
    pub market: &'a MarketParams,
    pub solver: &'a SolverSettings,
    pub pricing: &'a PricingSettings,
    pub notes: Vec<&'static str>,
}

pub fn metadata<'a>(figure: Figure, spec: &'a SweepSpec, ctx: SweepContext<'a>) -> SweepMetadata<'a> {
    let mut notes = vec![];
    match figure {
        Figure::Fig5a | Figure::Fig5b => {
            notes.push("three miners with block sizes (150, 175, 200): miners 1 and 2 carry the smaller blocks");
            notes.push("prices, demands and utilities are the discriminatory-pricing optimum");
        }
        Figure::Fig4 => notes.push("block sizes drawn once per seed; larger markets extend smaller ones"),
        Figure::Fig2b => notes.push("analytic race; rivals fixed at (40, 60) and (40, 50, 60)"),
    }
    SweepMetadata {
        figure: figure.name(),
        seed: spec.seed,
        version: env!("CARGO_PKG_VERSION"),
        spec,
        market: ctx.market,
        solver: ctx.solver,
        pricing: ctx.pricing,
        notes,
    }
}
