//! Stage I: the provider's pricing problem, solved by backward induction.
//!
//! Every price probe re-solves the miners' sub-game and is feasible only if
//! each miner keeps a nonnegative expected utility (individual
//! rationality). Profit is piecewise smooth with kinks where miners become
//! pinned at `x_min` or where rationality starts binding, so the search is
//! derivative free: a uniform price grid, then bisection onto every
//! feasibility edge and golden-section refinement around grid maxima.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::market::{provider_profit, Market, PriceVector, PricingScheme};
use crate::nash::{aggregate_demands, solve_nash_aggregate, EquilibriumReport, SolverSettings};
use crate::search::{bisect_boundary, golden_max, Probe};

/// Prices are searched over `[c + PRICE_FLOOR_OFFSET, p_max]`.
pub const PRICE_FLOOR_OFFSET: f64 = 1e-6;

/// Candidates within this relative profit of the best are ties.
pub const PROFIT_TIE: f64 = 1e-9;

/// Minimum relative gain for a coordinate move to be accepted.
const MIN_GAIN: f64 = 1e-12;

/// Grid maxima refined per uniform line search; coordinate moves refine
/// only the best one.
const MAX_BRACKETS: usize = 8;

/// Extra discriminatory seeds, as multiples of the pinned-extraction prices.
const SEED_SCALES: [f64; 6] = [0.5, 2.0, 0.25, 0.75, 1.5, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingSettings {
    pub grid_points: usize,
    /// Grid used for each per-miner move of the discriminatory search.
    pub coordinate_grid_points: usize,
    pub refine: bool,
    pub refine_tolerance: f64,
    pub multistarts: usize,
    pub coordinate_sweeps: usize,
    /// Smallest utility a miner may be left with.
    pub ir_tolerance: f64,
    #[serde(skip_serializing)]
    pub execution: Execution,
}

impl Default for PricingSettings {
    fn default() -> Self {
        Self {
            grid_points: 2000,
            coordinate_grid_points: 200,
            refine: true,
            refine_tolerance: 1e-8,
            multistarts: 8,
            coordinate_sweeps: 50,
            ir_tolerance: 1e-9,
            execution: Execution::default(),
        }
    }
}

impl PricingSettings {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 2 {
            return Err(Error::invalid("pricing.grid_points", "must be >= 2"));
        }
        if self.coordinate_grid_points < 2 {
            return Err(Error::invalid("pricing.coordinate_grid_points", "must be >= 2"));
        }
        if self.multistarts == 0 {
            return Err(Error::invalid("pricing.multistarts", "must be >= 1"));
        }
        if self.coordinate_sweeps == 0 {
            return Err(Error::invalid("pricing.coordinate_sweeps", "must be >= 1"));
        }
        if !(self.refine_tolerance > 0.0 && self.refine_tolerance.is_finite()) {
            return Err(Error::invalid("pricing.refine_tolerance", "must be > 0"));
        }
        if !(self.ir_tolerance >= 0.0 && self.ir_tolerance.is_finite()) {
            return Err(Error::invalid("pricing.ir_tolerance", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackelbergSolution {
    pub scheme: PricingScheme,
    pub prices: PriceVector,
    pub equilibrium: EquilibriumReport,
    pub provider_profit: f64,
    pub feasible: bool,
    pub candidates_evaluated: usize,
    /// Probes whose inner equilibrium failed to certify; counted as
    /// infeasible.
    pub rejected_probes: usize,
}

#[derive(Debug, Clone, Copy)]
struct Evaluation {
    /// `-inf` when infeasible.
    profit: f64,
    /// All utilities are nonnegative without slack.
    strict: bool,
    rejected: bool,
}

impl Evaluation {
    fn feasible(&self) -> bool {
        self.profit > f64::NEG_INFINITY
    }
}

#[derive(Debug, Default)]
struct LineResult {
    best: Option<Probe>,
    evals: usize,
    rejected: usize,
}

struct Stage1<'a> {
    market: &'a Market,
    solver: &'a SolverSettings,
    settings: &'a PricingSettings,
    lo: f64,
    hi: f64,
}

impl<'a> Stage1<'a> {
    fn new(market: &'a Market, settings: &'a PricingSettings, solver: &'a SolverSettings) -> Result<Self> {
        settings.validate()?;
        let params = market.params();
        let lo = params.provider_unit_cost + PRICE_FLOOR_OFFSET;
        let hi = params.price_cap;
        if params.provider_unit_cost >= params.price_cap || lo > hi {
            return Err(Error::InfeasibleMarket(format!(
                "unit cost {} leaves no price below the cap {}",
                params.provider_unit_cost, params.price_cap
            )));
        }
        Ok(Self {
            market,
            solver,
            settings,
            lo,
            hi,
        })
    }

    fn evaluate(&self, prices: Vec<f64>) -> Evaluation {
        if prices.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Evaluation {
                profit: f64::NEG_INFINITY,
                strict: false,
                rejected: true,
            };
        }
        let params = self.market.params();
        let (demands, _, _) = aggregate_demands(&prices, self.market);
        let power = demands.iter().sum::<f64>() + params.outside_power;
        let mut worst = f64::INFINITY;
        let mut profit = 0.0;
        for ((x, p), v) in demands.iter().zip(&prices).zip(self.market.valuations()) {
            worst = worst.min(v * (x / power) - p * x);
            profit += (p - params.provider_unit_cost) * x;
        }
        if worst < -self.settings.ir_tolerance {
            return Evaluation {
                profit: f64::NEG_INFINITY,
                strict: false,
                rejected: false,
            };
        }
        Evaluation {
            profit,
            strict: worst >= 0.0,
            rejected: false,
        }
    }

    /// Maximizes profit along one price coordinate described by `eval`.
    fn line_search<F>(&self, g: usize, brackets: usize, eval: F) -> LineResult
    where
        F: Fn(f64) -> Evaluation + Sync + Send,
    {
        let (lo, hi) = (self.lo, self.hi);
        let at = |k: usize| {
            if k + 1 == g {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (g - 1) as f64
            }
        };
        let grid: Vec<Evaluation> = exec::map_range(self.settings.execution, g, |k| eval(at(k)));
        let mut out = LineResult {
            evals: g,
            rejected: grid.iter().filter(|e| e.rejected).count(),
            ..LineResult::default()
        };
        let mut candidates: Vec<Probe> = grid
            .iter()
            .enumerate()
            .filter(|(_, e)| e.feasible())
            .map(|(k, e)| Probe {
                x: at(k),
                value: e.profit,
            })
            .collect();

        if self.settings.refine {
            let record = |e: Evaluation, out: &mut LineResult| {
                out.evals += 1;
                if e.rejected {
                    out.rejected += 1;
                }
            };
            // feasibility edges
            for k in 0..g - 1 {
                let (a, b) = (grid[k].feasible(), grid[k + 1].feasible());
                if a == b {
                    continue;
                }
                let (inside, outside) = if a { (at(k), at(k + 1)) } else { (at(k + 1), at(k)) };
                let tol = 1e-13 * hi.max(1.0);
                let (edge, n) = bisect_boundary(inside, outside, tol, |p| {
                    let e = eval(p);
                    e.feasible() && e.strict
                });
                out.evals += n;
                let e = eval(edge);
                record(e, &mut out);
                if e.feasible() {
                    candidates.push(Probe {
                        x: edge,
                        value: e.profit,
                    });
                }
            }
            // grid maxima
            let value = |k: usize| grid[k].profit;
            let mut peaks: Vec<usize> = (0..g)
                .filter(|&k| {
                    grid[k].feasible()
                        && (k == 0 || value(k) >= value(k - 1))
                        && (k + 1 == g || value(k) >= value(k + 1))
                })
                .collect();
            peaks.sort_by(|&a, &b| value(b).total_cmp(&value(a)).then(a.cmp(&b)));
            for &k in peaks.iter().take(brackets) {
                let a = at(k.saturating_sub(1));
                let b = at((k + 1).min(g - 1));
                let (probe, n) = golden_max(a, b, self.settings.refine_tolerance, |p| {
                    let e = eval(p);
                    if e.rejected {
                        f64::NEG_INFINITY
                    } else {
                        e.profit
                    }
                });
                out.evals += n;
                if probe.value > f64::NEG_INFINITY {
                    candidates.push(probe);
                }
            }
        }
        out.best = select_smallest(&candidates);
        out
    }

    fn finalize(&self, prices: PriceVector, candidates: usize, rejected: usize) -> Result<StackelbergSolution> {
        let equilibrium = solve_nash_aggregate(&prices, self.market, self.solver)?;
        let feasible = equilibrium.utilities.iter().all(|&u| u >= -self.settings.ir_tolerance);
        if !feasible || !equilibrium.converged {
            return Err(Error::InfeasibleMarket("optimum failed its final check".into()));
        }
        let profit = provider_profit(&equilibrium.demands, &prices, self.market.params());
        Ok(StackelbergSolution {
            scheme: prices.scheme,
            prices,
            equilibrium,
            provider_profit: profit,
            feasible,
            candidates_evaluated: candidates,
            rejected_probes: rejected,
        })
    }
}

fn tie_floor(best: f64) -> f64 {
    best - PROFIT_TIE * best.abs()
}

/// Best candidate, preferring the smallest price among near-equal profits.
fn select_smallest(candidates: &[Probe]) -> Option<Probe> {
    let best = candidates.iter().map(|c| c.value).fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return None;
    }
    let floor = tie_floor(best);
    candidates
        .iter()
        .filter(|c| c.value >= floor)
        .min_by(|a, b| a.x.total_cmp(&b.x))
        .copied()
}

/// Profit-maximizing single price charged to every miner.
pub fn optimize_uniform(
    market: &Market,
    settings: &PricingSettings,
    solver: &SolverSettings,
) -> Result<StackelbergSolution> {
    let stage = Stage1::new(market, settings, solver)?;
    let n = market.len();
    let line = stage.line_search(settings.grid_points, MAX_BRACKETS, |p| stage.evaluate(vec![p; n]));
    let best = line
        .best
        .ok_or_else(|| Error::InfeasibleMarket("no uniform price keeps every miner rational".into()))?;
    stage.finalize(PriceVector::uniform(best.x, n), line.evals, line.rejected)
}

/// Seed prices `p_i = V_i / (N x_min)` under which every miner sits at
/// `x_min` with zero surplus, so the provider extracts `sum_i V_i / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PinnedCandidate {
    pub prices: PriceVector,
    /// False when some price had to be clamped into the admissible range.
    pub extracting: bool,
}

pub fn pinned_extraction_candidate(market: &Market) -> Result<PinnedCandidate> {
    let params = market.params();
    if params.outside_power > 0.0 {
        return Err(Error::ClosedFormUnsupported("zero outside power"));
    }
    let n = market.len();
    if n < 2 {
        return Err(Error::ClosedFormUnsupported("at least two miners"));
    }
    let lo = params.provider_unit_cost + PRICE_FLOOR_OFFSET;
    let hi = params.price_cap;
    let mut extracting = true;
    let prices = market
        .valuations()
        .iter()
        .map(|v| {
            let p = v / (n as f64 * params.demand_min);
            let clamped = p.max(lo).min(hi);
            if clamped != p {
                extracting = false;
            }
            clamped
        })
        .collect();
    Ok(PinnedCandidate {
        prices: PriceVector::discriminatory(prices),
        extracting,
    })
}

/// Per-miner prices found by coordinate ascent from several seeds,
/// including the replicated uniform optimum and the pinned-extraction
/// candidate.
pub fn optimize_discriminatory(
    market: &Market,
    settings: &PricingSettings,
    solver: &SolverSettings,
) -> Result<StackelbergSolution> {
    let uniform = match optimize_uniform(market, settings, solver) {
        Ok(u) => Some(u),
        Err(Error::InfeasibleMarket(_)) => None,
        Err(e) => return Err(e),
    };
    discriminatory_from(market, settings, solver, uniform.as_ref())
}

fn discriminatory_seeds(
    market: &Market,
    settings: &PricingSettings,
    uniform: Option<&StackelbergSolution>,
) -> Vec<Vec<f64>> {
    let params = market.params();
    let (lo, hi) = (params.provider_unit_cost + PRICE_FLOOR_OFFSET, params.price_cap);
    let n = market.len();
    let mut seeds: Vec<Vec<f64>> = Vec::new();
    if let Some(u) = uniform {
        seeds.push(u.prices.prices.clone());
    }
    let pinned = pinned_extraction_candidate(market).ok().map(|c| c.prices.prices);
    if let Some(p) = &pinned {
        seeds.push(p.clone());
    }
    let base = pinned
        .or_else(|| uniform.map(|u| u.prices.prices.clone()))
        .unwrap_or_else(|| vec![0.5 * (lo + hi); n]);
    for &s in SEED_SCALES.iter().take(settings.multistarts.saturating_sub(2)) {
        seeds.push(base.iter().map(|p| (p * s).max(lo).min(hi)).collect());
    }
    let mut unique: Vec<Vec<f64>> = Vec::with_capacity(seeds.len());
    for s in seeds {
        if !unique.contains(&s) {
            unique.push(s);
        }
    }
    unique
}

fn discriminatory_from(
    market: &Market,
    settings: &PricingSettings,
    solver: &SolverSettings,
    uniform: Option<&StackelbergSolution>,
) -> Result<StackelbergSolution> {
    let stage = Stage1::new(market, settings, solver)?;
    let n = market.len();
    let mut evals = uniform.map_or(0, |u| u.candidates_evaluated);
    let mut rejected = 0;
    let mut finishes: Vec<(f64, Vec<f64>)> = Vec::new();

    for seed in discriminatory_seeds(market, settings, uniform) {
        let start = stage.evaluate(seed.clone());
        evals += 1;
        let mut current = seed;
        let mut profit = start.profit;
        for _ in 0..settings.coordinate_sweeps {
            let mut moved = false;
            for i in 0..n {
                let line = stage.line_search(settings.coordinate_grid_points, 1, |p| {
                    let mut trial = current.clone();
                    trial[i] = p;
                    stage.evaluate(trial)
                });
                evals += line.evals;
                rejected += line.rejected;
                let Some(best) = line.best else { continue };
                let gain = best.value - profit;
                if profit == f64::NEG_INFINITY || gain > MIN_GAIN * profit.abs().max(1.0) {
                    current[i] = best.x;
                    profit = best.value;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        if profit > f64::NEG_INFINITY {
            finishes.push((profit, current));
        }
    }

    let best = finishes.iter().map(|f| f.0).fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return Err(Error::InfeasibleMarket(
            "no price vector keeps every miner rational".into(),
        ));
    }
    let floor = tie_floor(best);
    let (_, prices) = finishes
        .into_iter()
        .filter(|f| f.0 >= floor)
        .min_by(|a, b| lexicographic(&a.1, &b.1))
        .expect("best profit is attained");
    stage.finalize(PriceVector::discriminatory(prices), evals, rejected)
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackelbergComparison {
    pub uniform: StackelbergSolution,
    pub discriminatory: StackelbergSolution,
    /// `profit_DP - profit_UP`, nonnegative up to `PROFIT_TIE`.
    pub profit_gain: f64,
    /// `X_DP - X_UP`; observational.
    pub demand_gap: f64,
}

impl StackelbergComparison {
    pub fn dp_dominates(&self) -> bool {
        self.profit_gain >= -1e-9 * self.uniform.provider_profit.abs().max(1.0)
    }
}

/// Both pricing schemes with a comparison record.
pub fn stackelberg_solve(
    market: &Market,
    settings: &PricingSettings,
    solver: &SolverSettings,
) -> Result<StackelbergComparison> {
    let uniform = optimize_uniform(market, settings, solver)?;
    let discriminatory = discriminatory_from(market, settings, solver, Some(&uniform))?;
    let cmp = StackelbergComparison {
        profit_gain: discriminatory.provider_profit - uniform.provider_profit,
        demand_gap: discriminatory.equilibrium.demands.total() - uniform.equilibrium.demands.total(),
        uniform,
        discriminatory,
    };
    debug_assert!(cmp.dp_dominates(), "discriminatory optimum below uniform replication");
    Ok(cmp)
}
