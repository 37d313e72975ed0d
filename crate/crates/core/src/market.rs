//! Economic primitives of the edge-compute mining market.
//!
//! A miner buying `x_i` compute units from the edge provider wins the next
//! block with probability equal to its share of total hash power,
//! `x_i / (X + Q)`, where `Q` is hash power outside the priced market. The
//! prize is its valuation `V_i = (R + r * t_i) * exp(-lambda * t_i)` for a
//! block of `t_i` transactions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinerProfile {
    pub id: usize,
    /// Transactions per block, strictly positive.
    pub block_size: f64,
}

impl MinerProfile {
    pub fn new(id: usize, block_size: f64) -> Result<Self> {
        if !(block_size.is_finite() && block_size > 0.0) {
            return Err(Error::invalid(
                format!("miners.block_sizes[{id}]"),
                format!("block size must be finite and > 0, got {block_size}"),
            ));
        }
        Ok(Self { id, block_size })
    }
}

/// Builds profiles with contiguous ids from a list of block sizes.
pub fn profiles_from_block_sizes(sizes: &[f64]) -> Result<Vec<MinerProfile>> {
    sizes
        .iter()
        .enumerate()
        .map(|(id, &t)| MinerProfile::new(id, t))
        .collect()
}

/// Global economic constants shared by every miner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketParams {
    /// Fixed block reward `R`.
    pub fixed_reward: f64,
    /// Reward per transaction `r`.
    pub variable_reward_rate: f64,
    /// Provider cost `c` per compute unit served.
    pub provider_unit_cost: f64,
    pub demand_min: f64,
    pub demand_max: f64,
    pub price_cap: f64,
    /// Hash power `Q` not bought from the provider.
    pub outside_power: f64,
    /// Per-transaction consensus-delay discount `lambda`.
    pub orphan_rate: f64,
    pub block_size_mean: f64,
    pub block_size_var: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            fixed_reward: 1e4,
            variable_reward_rate: 20.0,
            provider_unit_cost: 0.0,
            demand_min: 1.0,
            demand_max: 1000.0,
            price_cap: 1e4,
            outside_power: 0.0,
            orphan_rate: 0.0,
            block_size_mean: 200.0,
            block_size_var: 5.0,
        }
    }
}

fn nonneg(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            format!("market.{field}"),
            format!("must be finite and >= 0, got {v}"),
        ))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            format!("market.{field}"),
            format!("must be finite and > 0, got {v}"),
        ))
    }
}

impl MarketParams {
    /// Checks every per-field domain. The relation between the price cap and
    /// the unit cost is left to [`MarketParams::validate`], since an instance
    /// with `c >= p_max` is a well-formed market that simply has no
    /// profitable price.
    pub fn validate_domains(&self) -> Result<()> {
        nonneg("fixed_reward", self.fixed_reward)?;
        nonneg("variable_reward_rate", self.variable_reward_rate)?;
        nonneg("provider_unit_cost", self.provider_unit_cost)?;
        positive("demand_min", self.demand_min)?;
        positive("demand_max", self.demand_max)?;
        if self.demand_max < self.demand_min {
            return Err(Error::invalid(
                "market.demand_max",
                format!("must be >= demand_min ({}), got {}", self.demand_min, self.demand_max),
            ));
        }
        positive("price_cap", self.price_cap)?;
        nonneg("outside_power", self.outside_power)?;
        nonneg("orphan_rate", self.orphan_rate)?;
        positive("block_size_mean", self.block_size_mean)?;
        nonneg("block_size_var", self.block_size_var)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_domains()?;
        if self.price_cap <= self.provider_unit_cost {
            return Err(Error::invalid(
                "market.price_cap",
                format!(
                    "must exceed provider_unit_cost ({}), got {}",
                    self.provider_unit_cost, self.price_cap
                ),
            ));
        }
        Ok(())
    }

    pub fn clamp_demand(&self, x: f64) -> f64 {
        x.max(self.demand_min).min(self.demand_max)
    }
}

/// A miner's prize for winning a block of the given size.
pub fn valuation(profile: &MinerProfile, params: &MarketParams) -> f64 {
    let t = profile.block_size;
    let prize = params.fixed_reward + params.variable_reward_rate * t;
    if params.orphan_rate == 0.0 {
        prize
    } else {
        prize * (-params.orphan_rate * t).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PricingScheme {
    Uniform,
    Discriminatory,
}

impl PricingScheme {
    pub fn name(self) -> &'static str {
        match self {
            PricingScheme::Uniform => "uniform",
            PricingScheme::Discriminatory => "discriminatory",
        }
    }
}

impl std::fmt::Display for PricingScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceVector {
    pub scheme: PricingScheme,
    pub prices: Vec<f64>,
}

impl PriceVector {
    pub fn uniform(price: f64, miners: usize) -> Self {
        Self {
            scheme: PricingScheme::Uniform,
            prices: vec![price; miners],
        }
    }

    pub fn discriminatory(prices: Vec<f64>) -> Self {
        Self {
            scheme: PricingScheme::Discriminatory,
            prices,
        }
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.prices.iter().sum::<f64>() / self.prices.len() as f64
    }

    pub fn validate(&self, params: &MarketParams) -> Result<()> {
        for (i, &p) in self.prices.iter().enumerate() {
            if !(p.is_finite() && p > 0.0 && p <= params.price_cap) {
                return Err(Error::invalid(
                    format!("prices[{i}]"),
                    format!("must lie in (0, {}], got {p}", params.price_cap),
                ));
            }
        }
        if self.scheme == PricingScheme::Uniform && self.prices.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::invalid("prices", "uniform scheme requires equal prices"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    demands: Vec<f64>,
    total: f64,
}

impl DemandProfile {
    pub fn new(demands: Vec<f64>) -> Self {
        let total = demands.iter().sum();
        Self { demands, total }
    }

    pub fn demands(&self) -> &[f64] {
        &self.demands
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.demands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demands.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.demands
    }

    /// Checks that every demand lies in the purchasable box.
    pub fn check_box(&self, params: &MarketParams) -> Result<()> {
        for (i, &x) in self.demands.iter().enumerate() {
            if !(x >= params.demand_min && x <= params.demand_max) {
                return Err(Error::invalid(
                    format!("demands[{i}]"),
                    format!("must lie in [{}, {}], got {x}", params.demand_min, params.demand_max),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WinProbabilities {
    pub probs: Vec<f64>,
    /// Set when nobody holds any hash power, so no block is found.
    pub no_winner: bool,
}

pub fn win_probability(demands: &DemandProfile, params: &MarketParams) -> WinProbabilities {
    win_probability_with(demands.demands(), demands.total(), params.outside_power)
}

pub(crate) fn win_probability_with(demands: &[f64], total: f64, outside: f64) -> WinProbabilities {
    let power = total + outside;
    if power <= 0.0 {
        return WinProbabilities {
            probs: vec![0.0; demands.len()],
            no_winner: true,
        };
    }
    WinProbabilities {
        probs: demands.iter().map(|x| x / power).collect(),
        no_winner: false,
    }
}

/// A validated market: parameters plus miners with cached valuations.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    params: MarketParams,
    profiles: Vec<MinerProfile>,
    valuations: Vec<f64>,
}

impl Market {
    pub fn new(params: MarketParams, profiles: Vec<MinerProfile>) -> Result<Self> {
        params.validate_domains()?;
        if profiles.is_empty() {
            return Err(Error::invalid("miners", "at least one miner is required"));
        }
        for (k, p) in profiles.iter().enumerate() {
            if p.id != k {
                return Err(Error::invalid(
                    format!("miners[{k}].id"),
                    "ids must be unique and contiguous from 0",
                ));
            }
            MinerProfile::new(p.id, p.block_size)?;
        }
        let valuations = profiles.iter().map(|p| valuation(p, &params)).collect();
        Ok(Self {
            params,
            profiles,
            valuations,
        })
    }

    pub fn from_block_sizes(params: MarketParams, sizes: &[f64]) -> Result<Self> {
        Self::new(params, profiles_from_block_sizes(sizes)?)
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn profiles(&self) -> &[MinerProfile] {
        &self.profiles
    }

    pub fn valuations(&self) -> &[f64] {
        &self.valuations
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn is_symmetric(&self) -> bool {
        self.valuations.windows(2).all(|w| w[0] == w[1])
    }
}

/// Expected utility `V_i * P_i - p_i * x_i` of miner `i`.
pub fn miner_utility(i: usize, demands: &DemandProfile, prices: &PriceVector, market: &Market) -> f64 {
    let power = demands.total() + market.params().outside_power;
    let x = demands.demands()[i];
    let share = if power > 0.0 { x / power } else { 0.0 };
    market.valuations()[i] * share - prices.prices[i] * x
}

/// Provider profit `sum_i (p_i - c) * x_i`.
pub fn provider_profit(demands: &DemandProfile, prices: &PriceVector, params: &MarketParams) -> f64 {
    demands
        .demands()
        .iter()
        .zip(&prices.prices)
        .map(|(x, p)| (p - params.provider_unit_cost) * x)
        .sum()
}

/// Draws block sizes from `Normal(mu_t, sigma^2)` truncated to `t > 0`.
///
/// The stream of standard-normal draws depends only on `seed`, so the first
/// `k` sizes are shared between calls with different `n`.
pub fn sample_block_sizes(n: usize, params: &MarketParams, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("miners.count", "must be >= 1"));
    }
    positive("block_size_mean", params.block_size_mean)?;
    nonneg("block_size_var", params.block_size_var)?;
    let mean = params.block_size_mean;
    if params.block_size_var == 0.0 {
        return Ok(vec![mean; n]);
    }
    let normal = Normal::new(mean, params.block_size_var.sqrt())
        .map_err(|e| Error::invalid("market.block_size_var", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = Vec::with_capacity(n);
    while sizes.len() < n {
        let t: f64 = normal.sample(&mut rng);
        if t > 0.0 {
            sizes.push(t);
        }
    }
    Ok(sizes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> MarketParams {
        MarketParams::default()
    }

    #[test]
    fn valuation_examples() {
        let p = params();
        let m = MinerProfile::new(0, 200.0).unwrap();
        assert_eq!(valuation(&m, &p), 14000.0);

        let flat = MarketParams {
            fixed_reward: 5.0,
            variable_reward_rate: 0.0,
            ..p
        };
        assert_eq!(valuation(&MinerProfile::new(0, 123.0).unwrap(), &flat), 5.0);

        let discounted = MarketParams {
            orphan_rate: 0.001,
            ..p
        };
        let v = valuation(&m, &discounted);
        assert!((v - 14000.0 * (-0.2f64).exp()).abs() < 1e-9);
        assert!((v - 11462.230543).abs() < 1e-5);
    }

    #[test]
    fn win_probability_examples() {
        let p = params();
        let w = win_probability(&DemandProfile::new(vec![40.0, 60.0, 100.0]), &p);
        assert_eq!(w.probs, vec![0.2, 0.3, 0.5]);
        assert!(!w.no_winner);

        let q = MarketParams {
            outside_power: 100.0,
            ..p
        };
        assert_eq!(win_probability(&DemandProfile::new(vec![100.0]), &q).probs, vec![0.5]);

        let solo = win_probability(&DemandProfile::new(vec![p.demand_min]), &p);
        assert_eq!(solo.probs, vec![1.0]);
    }

    #[test]
    fn all_zero_demand_has_no_winner() {
        let w = win_probability(&DemandProfile::new(vec![0.0, 0.0]), &params());
        assert!(w.no_winner);
        assert_eq!(w.probs, vec![0.0, 0.0]);
    }

    #[test]
    fn utility_examples() {
        let market = Market::from_block_sizes(params(), &[200.0, 200.0]).unwrap();
        let d = DemandProfile::new(vec![25.0, 25.0]);
        let prices = PriceVector::uniform(1.0, 2);
        assert!((miner_utility(0, &d, &prices, &market) - 6975.0).abs() < 1e-9);

        // individual-rationality boundary at x = (x_min, x_min)
        let xmin = market.params().demand_min;
        let d = DemandProfile::new(vec![xmin, xmin]);
        let p = PriceVector::uniform(14000.0 / (2.0 * xmin), 2);
        assert!(miner_utility(0, &d, &p, &market).abs() < 1e-9);

        let two = MarketParams {
            fixed_reward: 0.0,
            variable_reward_rate: 1.0,
            ..params()
        };
        let market = Market::from_block_sizes(two, &[100.0, 200.0]).unwrap();
        let d = DemandProfile::new(vec![200.0 / 9.0, 400.0 / 9.0]);
        let p = PriceVector::uniform(1.0, 2);
        let u0 = miner_utility(0, &d, &p, &market);
        let u1 = miner_utility(1, &d, &p, &market);
        assert!((u0 - 11.1111).abs() < 1e-4);
        assert!((u1 - 88.8889).abs() < 1e-4);
        // interior identity u_i = V_i (1 - p X / V_i)^2
        let x = d.total();
        assert!((u0 - 100.0 * (1.0 - x / 100.0).powi(2)).abs() < 1e-9);
        assert!((u1 - 200.0 * (1.0 - x / 200.0).powi(2)).abs() < 1e-9);
    }

    #[test]
    fn profit_examples() {
        let p = params();
        let d = DemandProfile::new(vec![1.0, 1.0]);
        assert_eq!(
            provider_profit(&d, &PriceVector::discriminatory(vec![50.0, 100.0]), &p),
            150.0
        );

        let d = DemandProfile::new(vec![1.0; 100]);
        assert_eq!(provider_profit(&d, &PriceVector::uniform(140.0, 100), &p), 14000.0);

        let costly = MarketParams {
            provider_unit_cost: 3.0,
            ..p
        };
        let d = DemandProfile::new(vec![5.0, 7.0, 11.0]);
        assert_eq!(provider_profit(&d, &PriceVector::uniform(3.0, 3), &costly), 0.0);
    }

    #[test]
    fn degenerate_sampling_returns_the_mean() {
        let p = MarketParams {
            block_size_var: 0.0,
            ..params()
        };
        assert_eq!(sample_block_sizes(7, &p, 3).unwrap(), vec![200.0; 7]);
    }

    #[test]
    fn sampling_mean_within_standard_error_bound() {
        let s = sample_block_sizes(10_000, &params(), 11).unwrap();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((mean - 200.0).abs() < 4.0 * (5.0f64 / 1e4).sqrt());
        assert!(s.iter().all(|&t| t > 0.0));
    }

    #[test]
    fn sampling_is_deterministic_and_prefix_stable() {
        let p = params();
        let a = sample_block_sizes(50, &p, 9).unwrap();
        assert_eq!(a, sample_block_sizes(50, &p, 9).unwrap());
        assert_eq!(&a[..20], &sample_block_sizes(20, &p, 9).unwrap()[..]);
        assert_ne!(a, sample_block_sizes(50, &p, 10).unwrap());
    }

    #[test]
    fn rejects_bad_parameters() {
        let bad = MarketParams {
            demand_min: 0.0,
            ..params()
        };
        match bad.validate() {
            Err(Error::InvalidParam { field, .. }) => assert_eq!(field, "market.demand_min"),
            other => panic!("unexpected {other:?}"),
        }
        let capped = MarketParams {
            provider_unit_cost: 1e4,
            ..params()
        };
        assert!(capped.validate().is_err());
        assert!(capped.validate_domains().is_ok());
        assert!(MinerProfile::new(0, 0.0).is_err());
        assert!(sample_block_sizes(0, &params(), 1).is_err());
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_market_share(
            xs in prop::collection::vec(0.1f64..1000.0, 1..20),
            q in 0.0f64..500.0,
        ) {
            let p = MarketParams { outside_power: q, ..params() };
            let d = DemandProfile::new(xs);
            let w = win_probability(&d, &p);
            let sum: f64 = w.probs.iter().sum();
            let expected = d.total() / (d.total() + q);
            prop_assert!((sum - expected).abs() <= 1e-12);
            prop_assert!(w.probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }

        #[test]
        fn probability_monotone_in_demands(
            xs in prop::collection::vec(1.0f64..100.0, 2..8),
            h in 0.01f64..5.0,
        ) {
            let p = params();
            let base = win_probability(&DemandProfile::new(xs.clone()), &p).probs;
            let mut up = xs.clone();
            up[0] += h;
            let bumped = win_probability(&DemandProfile::new(up), &p).probs;
            prop_assert!(bumped[0] > base[0]);
            prop_assert!(bumped[1] < base[1]);
        }

        #[test]
        fn utility_strictly_concave_in_own_demand(
            v in 10.0f64..20000.0,
            rivals in 0.5f64..500.0,
            price in 0.01f64..100.0,
            x in 1.0f64..900.0,
        ) {
            let u = |x: f64| v * x / (x + rivals) - price * x;
            let h = 1e-2 * x.max(1.0);
            let second = u(x + h) - 2.0 * u(x) + u(x - h);
            prop_assert!(second < 0.0);
        }

        #[test]
        fn valuation_nondecreasing(
            r0 in 0.0f64..2e4, dr in 0.0f64..1e3,
            k0 in 0.0f64..50.0, dk in 0.0f64..10.0,
            t0 in 1.0f64..500.0, dt in 0.0f64..100.0,
        ) {
            let base = MarketParams { fixed_reward: r0, variable_reward_rate: k0, ..params() };
            let m = MinerProfile::new(0, t0).unwrap();
            let v = valuation(&m, &base);
            let more_r = MarketParams { fixed_reward: r0 + dr, ..base };
            let more_k = MarketParams { variable_reward_rate: k0 + dk, ..base };
            prop_assert!(valuation(&m, &more_r) >= v);
            prop_assert!(valuation(&m, &more_k) >= v);
            prop_assert!(valuation(&MinerProfile::new(0, t0 + dt).unwrap(), &base) >= v);
        }

        #[test]
        fn profit_recomputes_from_parts(
            xs in prop::collection::vec(1.0f64..1000.0, 1..30),
            seed_price in 0.5f64..500.0,
        ) {
            let p = MarketParams { provider_unit_cost: 0.25, ..params() };
            let prices: Vec<f64> = (0..xs.len()).map(|i| seed_price * (1.0 + i as f64 * 0.1)).collect();
            let pv = PriceVector::discriminatory(prices.clone());
            let d = DemandProfile::new(xs.clone());
            let reported = provider_profit(&d, &pv, &p);
            let mut parts = 0.0;
            for (x, pr) in xs.iter().zip(&prices) {
                parts += pr * x - 0.25 * x;
            }
            prop_assert!((reported - parts).abs() <= 1e-12 * parts.abs().max(1.0) * 10.0);
        }
    }
}
