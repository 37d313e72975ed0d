//! Stage II: the miners' demand sub-game for fixed prices.
//!
//! Three routes are provided. The closed form covers the all-interior case
//! without outside power. Damped simultaneous best response is the general
//! iterative path. The aggregate solver uses the share-function structure of
//! the contest: at total hash power `T` every miner's KKT demand is
//! `clamp(T - p_i T^2 / V_i, x_min, x_max)`, and the total is the unique
//! root of `sum_i x_i(T) + Q = T`. Pricing uses the aggregate solver since
//! it is exact and costs `O(N)` per Newton step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{win_probability_with, DemandProfile, Market, MarketParams, PriceVector};

/// Relative utility gain a unilateral deviation may achieve before an
/// equilibrium is rejected.
pub const DEVIATION_TOLERANCE: f64 = 1e-6;

/// Agreement required between the two iterative start points.
pub const START_AGREEMENT: f64 = 1e-6;

const MIN_DAMPING: f64 = 1e-4;

/// Solver behind [`solve_nash`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    #[default]
    Aggregate,
    BestResponse,
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub method: SolverMethod,
    pub damping: f64,
    /// Bound on `max_i |x_i - br_i(x)|` for a converged point.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub deviation_grid_points: usize,
    /// Also start the iteration from all-`x_max` and require agreement.
    pub check_multiplicity: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            method: SolverMethod::Aggregate,
            damping: 0.5,
            tolerance: 1e-10,
            max_iterations: 100_000,
            deviation_grid_points: 1000,
            check_multiplicity: false,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid(
                "solver.damping",
                format!("must lie in (0, 1], got {}", self.damping),
            ));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::invalid("solver.tolerance", "must be > 0"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("solver.max_iterations", "must be >= 1"));
        }
        if self.deviation_grid_points < 2 {
            return Err(Error::invalid("solver.deviation_grid_points", "must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    Interior,
    AtMin,
    AtMax,
}

impl Binding {
    pub fn name(self) -> &'static str {
        match self {
            Binding::Interior => "interior",
            Binding::AtMin => "at_min",
            Binding::AtMax => "at_max",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub demands: DemandProfile,
    pub utilities: Vec<f64>,
    pub win_probs: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub binding: Vec<Binding>,
}

/// Utility-maximizing demand of a miner with valuation `valuation` facing
/// rival demand `rivals` (outside power is added here) at unit price `price`.
///
/// With no rival power the miner wins for any positive demand, so the
/// cheapest admissible demand `x_min` is optimal.
pub fn best_response(valuation: f64, rivals: f64, price: f64, params: &MarketParams) -> f64 {
    let s = rivals + params.outside_power;
    if s <= 0.0 || valuation <= 0.0 {
        return params.demand_min;
    }
    params.clamp_demand((valuation * s / price).sqrt() - s)
}

fn best_responses(demands: &[f64], prices: &[f64], market: &Market, out: &mut [f64]) {
    let total: f64 = demands.iter().sum();
    let params = market.params();
    for (i, slot) in out.iter_mut().enumerate() {
        let rivals = total - demands[i];
        *slot = best_response(market.valuations()[i], rivals, prices[i], params);
    }
}

/// `max_i |x_i - br_i(x)|`.
pub fn kkt_residual(demands: &[f64], prices: &[f64], market: &Market) -> f64 {
    let mut br = vec![0.0; demands.len()];
    best_responses(demands, prices, market, &mut br);
    demands.iter().zip(&br).map(|(x, b)| (x - b).abs()).fold(0.0, f64::max)
}

fn classify(x: f64, params: &MarketParams) -> Binding {
    let slack = 1e-9 * params.demand_max.max(1.0);
    if x - params.demand_min <= slack {
        Binding::AtMin
    } else if params.demand_max - x <= slack {
        Binding::AtMax
    } else {
        Binding::Interior
    }
}

fn report(
    demands: Vec<f64>,
    prices: &PriceVector,
    market: &Market,
    iterations: usize,
    tolerance: f64,
) -> EquilibriumReport {
    let params = market.params();
    let residual = kkt_residual(&demands, &prices.prices, market);
    let profile = DemandProfile::new(demands);
    let win = win_probability_with(profile.demands(), profile.total(), params.outside_power);
    let utilities = win
        .probs
        .iter()
        .zip(profile.demands())
        .zip(market.valuations().iter().zip(&prices.prices))
        .map(|((share, x), (v, p))| v * share - p * x)
        .collect();
    let binding = profile.demands().iter().map(|&x| classify(x, params)).collect();
    EquilibriumReport {
        demands: profile,
        utilities,
        win_probs: win.probs,
        kkt_residual: residual,
        iterations,
        converged: residual <= tolerance,
        binding,
    }
}

fn check_prices(prices: &PriceVector, market: &Market) -> Result<()> {
    if prices.len() != market.len() {
        return Err(Error::invalid(
            "prices",
            format!("expected {} prices, got {}", market.len(), prices.len()),
        ));
    }
    for (i, &p) in prices.prices.iter().enumerate() {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::invalid(
                format!("prices[{i}]"),
                format!("must be finite and > 0, got {p}"),
            ));
        }
    }
    Ok(())
}

/// All-interior contest equilibrium without outside power:
/// `X = (N - 1) / sum_j (p_j / V_j)` and `x_i = X (1 - p_i X / V_i)`.
pub fn solve_nash_closed_form(
    prices: &PriceVector,
    market: &Market,
    settings: &SolverSettings,
) -> Result<EquilibriumReport> {
    check_prices(prices, market)?;
    let params = market.params();
    if params.outside_power > 0.0 {
        return Err(Error::ClosedFormUnsupported("zero outside power"));
    }
    let n = market.len();
    if n < 2 {
        return Err(Error::ClosedFormUnsupported("at least two miners"));
    }
    if let Some(i) = market.valuations().iter().position(|&v| v <= 0.0) {
        return Err(Error::NotAllInterior { miner: i, demand: 0.0 });
    }
    let burden: f64 = prices.prices.iter().zip(market.valuations()).map(|(p, v)| p / v).sum();
    let total = (n - 1) as f64 / burden;
    let mut demands = Vec::with_capacity(n);
    for (i, (p, v)) in prices.prices.iter().zip(market.valuations()).enumerate() {
        let x = total * (1.0 - p * total / v);
        if !(x > 0.0 && x > params.demand_min && x < params.demand_max) {
            return Err(Error::NotAllInterior { miner: i, demand: x });
        }
        demands.push(x);
    }
    Ok(report(demands, prices, market, 0, settings.tolerance))
}

fn iterate_from(
    start: f64,
    prices: &PriceVector,
    market: &Market,
    settings: &SolverSettings,
) -> Result<EquilibriumReport> {
    let params = market.params();
    let n = market.len();
    let mut x = vec![start; n];
    let mut br = vec![0.0; n];
    let mut theta = settings.damping;
    let mut previous = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for it in 0..settings.max_iterations {
        best_responses(&x, &prices.prices, market, &mut br);
        residual = x.iter().zip(&br).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if residual <= settings.tolerance {
            return Ok(report(x, prices, market, it, settings.tolerance));
        }
        // Simultaneous updates overshoot along the aggregate direction when
        // many miners react to the same total; back off until the residual
        // contracts, then creep back toward the configured step.
        if residual >= previous {
            theta = (theta * 0.5).max(MIN_DAMPING);
        } else {
            theta = (theta * 1.05).min(settings.damping);
        }
        previous = residual;
        for (xi, bi) in x.iter_mut().zip(&br) {
            *xi = params.clamp_demand((1.0 - theta) * *xi + theta * bi);
        }
    }
    Err(Error::NotConverged {
        iterations: settings.max_iterations,
        residual,
    })
}

/// Damped simultaneous best-response iteration `x <- (1 - theta) x + theta br(x)`
/// projected onto the demand box, started from all-`x_min`.
pub fn solve_nash_iterative(
    prices: &PriceVector,
    market: &Market,
    settings: &SolverSettings,
) -> Result<EquilibriumReport> {
    settings.validate()?;
    check_prices(prices, market)?;
    let params = market.params();
    let low = iterate_from(params.demand_min, prices, market, settings)?;
    if settings.check_multiplicity {
        let high = iterate_from(params.demand_max, prices, market, settings)?;
        let gap = low
            .demands
            .demands()
            .iter()
            .zip(high.demands.demands())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if gap > START_AGREEMENT {
            return Err(Error::MultipleEquilibria { gap });
        }
    }
    Ok(low)
}

fn share_demand(burden: f64, total: f64, params: &MarketParams) -> (f64, f64) {
    // burden = p_i / V_i; returns (x_i(T), dx_i/dT)
    if !burden.is_finite() {
        return (params.demand_min, 0.0);
    }
    let raw = total - burden * total * total;
    if raw <= params.demand_min {
        (params.demand_min, 0.0)
    } else if raw >= params.demand_max {
        (params.demand_max, 0.0)
    } else {
        (raw, 1.0 - 2.0 * burden * total)
    }
}

fn aggregate_gap(burdens: &[f64], total: f64, params: &MarketParams) -> (f64, f64) {
    let mut sum = params.outside_power - total;
    let mut slope = -1.0;
    for &b in burdens {
        let (x, dx) = share_demand(b, total, params);
        sum += x;
        slope += dx;
    }
    (sum, slope)
}

/// Solves for the equilibrium total hash power and reads demands off the
/// miners' share functions. Returns the total and the Newton step count.
fn equilibrium_total(burdens: &[f64], params: &MarketParams) -> (f64, usize) {
    let n = burdens.len() as f64;
    let mut lo = n * params.demand_min + params.outside_power;
    let mut hi = n * params.demand_max + params.outside_power;
    if aggregate_gap(burdens, lo, params).0 <= 0.0 {
        return (lo, 0);
    }
    if aggregate_gap(burdens, hi, params).0 >= 0.0 {
        return (hi, 0);
    }
    let inv: f64 = burdens.iter().filter(|b| b.is_finite()).sum();
    let guess = if inv > 0.0 {
        (n - 1.0).max(0.5) / inv + params.outside_power
    } else {
        lo
    };
    let mut t = if guess > lo && guess < hi {
        guess
    } else {
        0.5 * (lo + hi)
    };
    for step in 1..=200 {
        let (gap, slope) = aggregate_gap(burdens, t, params);
        if gap == 0.0 {
            return (t, step);
        }
        if gap > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return (0.5 * (lo + hi), step);
        }
        let newton = if slope < 0.0 { t - gap / slope } else { f64::NAN };
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() <= 2.0 * f64::EPSILON * t {
            return (next, step);
        }
        t = next;
    }
    (t, 200)
}

/// Equilibrium demands from the aggregate root, with the total and the
/// Newton step count. Prices are assumed valid.
pub(crate) fn aggregate_demands(prices: &[f64], market: &Market) -> (Vec<f64>, f64, usize) {
    let params = market.params();
    let burdens: Vec<f64> = prices
        .iter()
        .zip(market.valuations())
        .map(|(p, v)| if *v > 0.0 { p / v } else { f64::INFINITY })
        .collect();
    let (total, steps) = equilibrium_total(&burdens, params);
    let demands = burdens.iter().map(|&b| share_demand(b, total, params).0).collect();
    (demands, total, steps)
}

/// Exact equilibrium via the aggregate total. Valid for any `N >= 1`,
/// outside power and demand box.
pub fn solve_nash_aggregate(
    prices: &PriceVector,
    market: &Market,
    settings: &SolverSettings,
) -> Result<EquilibriumReport> {
    check_prices(prices, market)?;
    let (demands, total, steps) = aggregate_demands(&prices.prices, market);
    // the residual cannot resolve below the rounding of the summed total
    let n = market.len() as f64;
    let tolerance = settings.tolerance.max(4.0 * (n + 16.0) * f64::EPSILON * total);
    Ok(report(demands, prices, market, steps, tolerance))
}

/// Stage II entry point; dispatches on `settings.method`.
pub fn solve_nash(prices: &PriceVector, market: &Market, settings: &SolverSettings) -> Result<EquilibriumReport> {
    match settings.method {
        SolverMethod::Aggregate => solve_nash_aggregate(prices, market, settings),
        SolverMethod::BestResponse => solve_nash_iterative(prices, market, settings),
        SolverMethod::ClosedForm => solve_nash_closed_form(prices, market, settings),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub passed: bool,
    pub kkt_residual: f64,
    /// Largest utility gain any miner obtains by deviating alone.
    pub worst_improvement: f64,
    pub worst_miner: Option<usize>,
}

/// Certifies the Nash property by scanning unilateral deviations on a grid
/// over the demand box (plus the exact best response) for every miner.
pub fn verify_equilibrium(
    report: &EquilibriumReport,
    prices: &PriceVector,
    market: &Market,
    settings: &SolverSettings,
) -> Verification {
    let params = market.params();
    let demands = report.demands.demands();
    let total: f64 = demands.iter().sum();
    let grid = settings.deviation_grid_points.max(2);
    let step = (params.demand_max - params.demand_min) / (grid - 1) as f64;
    let mut passed = true;
    let mut worst_improvement = f64::NEG_INFINITY;
    let mut worst_miner = None;
    for (i, &x) in demands.iter().enumerate() {
        let v = market.valuations()[i];
        let p = prices.prices[i];
        let rivals = total - x + params.outside_power;
        let utility = |y: f64| {
            let power = y + rivals;
            let share = if power > 0.0 { y / power } else { 0.0 };
            v * share - p * y
        };
        let current = utility(x);
        let br = best_response(v, total - x, p, params);
        let best = (0..grid)
            .map(|k| params.demand_min + step * k as f64)
            .chain(std::iter::once(br))
            .map(|y| utility(y) - current)
            .fold(f64::NEG_INFINITY, f64::max);
        if best > worst_improvement {
            worst_improvement = best;
            worst_miner = Some(i);
        }
        if best > DEVIATION_TOLERANCE * v {
            passed = false;
        }
    }
    Verification {
        passed,
        kkt_residual: kkt_residual(demands, &prices.prices, market),
        worst_improvement,
        worst_miner,
    }
}
