//! Mining races: Monte Carlo checks of the contest success function, plus a
//! minimal SHA-256 proof of work.
//!
//! Digests are `SHA-256(header || nonce)` with the nonce encoded as 8
//! big-endian bytes; a digest meets difficulty `d` when its first `d` bits
//! are zero.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::market::win_probability_with;

/// Trials per work unit; fixed so that the split never depends on threads.
const TRIAL_BLOCK: u64 = 4096;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Difficulty(u32);

impl Difficulty {
    pub fn new(bits: u32) -> Result<Self> {
        if (1..=64).contains(&bits) {
            Ok(Self(bits))
        } else {
            Err(Error::invalid(
                "difficulty_bits",
                format!("must lie in [1, 64], got {bits}"),
            ))
        }
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn is_met_by(self, digest: &[u8; 32]) -> bool {
        leading_zero_bits(digest) >= self.0
    }
}

pub fn leading_zero_bits(digest: &[u8]) -> u32 {
    let mut bits = 0;
    for &b in digest {
        if b == 0 {
            bits += 8;
        } else {
            return bits + b.leading_zeros();
        }
    }
    bits
}

pub fn pow_digest(header: &[u8], nonce: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(header);
    h.update(nonce.to_be_bytes());
    h.finalize().into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PowSolution {
    pub nonce: u64,
    pub digest: [u8; 32],
    /// Hashes computed, including the successful one.
    pub attempts: u64,
}

/// Scans nonces upward from `start_nonce` and returns the first whose digest
/// meets `difficulty`, trying at most `max_attempts` nonces.
pub fn pow_solve(header: &[u8], difficulty: Difficulty, start_nonce: u64, max_attempts: u64) -> Result<PowSolution> {
    if max_attempts == 0 {
        return Err(Error::invalid("max_attempts", "must be >= 1"));
    }
    let prefix = Sha256::new_with_prefix(header);
    let mut nonce = start_nonce;
    for attempt in 1..=max_attempts {
        let mut h = prefix.clone();
        h.update(nonce.to_be_bytes());
        let digest: [u8; 32] = h.finalize().into();
        if difficulty.is_met_by(&digest) {
            return Ok(PowSolution {
                nonce,
                digest,
                attempts: attempt,
            });
        }
        match nonce.checked_add(1) {
            Some(n) => nonce = n,
            None => return Err(Error::NoSolutionWithinBudget { attempts: attempt }),
        }
    }
    Err(Error::NoSolutionWithinBudget { attempts: max_attempts })
}

/// Recomputes the digest once and checks the target.
pub fn pow_verify(header: &[u8], nonce: u64, difficulty: Difficulty) -> bool {
    difficulty.is_met_by(&pow_digest(header, nonce))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaceMode {
    /// Exponential solve times with rate proportional to demand.
    #[default]
    AnalyticRace,
    /// Real hashing: racer `j` tries `x_j` nonces per unit time.
    HashRace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceConfig {
    pub demands: Vec<f64>,
    pub outside_power: f64,
    pub trials: u64,
    pub seed: u64,
    pub mode: RaceMode,
    pub difficulty_bits: u32,
    #[serde(default)]
    pub execution: Execution,
}

impl RaceConfig {
    pub fn analytic(demands: Vec<f64>, trials: u64, seed: u64) -> Self {
        Self {
            demands,
            outside_power: 0.0,
            trials,
            seed,
            mode: RaceMode::AnalyticRace,
            difficulty_bits: 8,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("simulate.trials", "must be >= 1"));
        }
        for (i, &x) in self.demands.iter().enumerate() {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::invalid(
                    format!("simulate.demands[{i}]"),
                    "must be finite and >= 0",
                ));
            }
        }
        if !self.demands.iter().any(|&x| x > 0.0) {
            return Err(Error::invalid(
                "simulate.demands",
                "at least one demand must be positive",
            ));
        }
        if !(self.outside_power.is_finite() && self.outside_power >= 0.0) {
            return Err(Error::invalid("simulate.outside_power", "must be finite and >= 0"));
        }
        if self.mode == RaceMode::HashRace {
            Difficulty::new(self.difficulty_bits)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceStats {
    pub win_counts: Vec<u64>,
    pub outside_wins: u64,
    pub empirical_prob: Vec<f64>,
    pub analytic_prob: Vec<f64>,
    pub ci95: Vec<f64>,
    pub trials: u64,
    pub seed: u64,
}

impl RaceStats {
    /// Binomial standard error of miner `i`'s analytic probability.
    pub fn analytic_sigma(&self, i: usize) -> f64 {
        let p = self.analytic_prob[i];
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

pub fn binomial_ci95(p_hat: f64, trials: u64) -> f64 {
    Z95 * (p_hat * (1.0 - p_hat) / trials as f64).sqrt()
}

fn analytic_winner(rates: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut best = (f64::INFINITY, rates.len());
    for (j, &rate) in rates.iter().enumerate() {
        if rate <= 0.0 {
            continue;
        }
        let e: f64 = Exp1.sample(rng);
        let t = e / rate;
        if t < best.0 {
            best = (t, j);
        }
    }
    best.1
}

fn race_header(seed: u64, trial: u64, racer: usize) -> Vec<u8> {
    let mut h = Vec::with_capacity(34);
    h.extend_from_slice(b"edgechain-race");
    h.extend_from_slice(&seed.to_be_bytes());
    h.extend_from_slice(&trial.to_be_bytes());
    h.extend_from_slice(&(racer as u32).to_be_bytes());
    h
}

/// Each racer hashes its own header from nonce 0; its finish time is the
/// attempt count divided by its rate. Racers that cannot beat the current
/// leader stop early.
fn hash_winner(rates: &[f64], difficulty: Difficulty, seed: u64, trial: u64) -> usize {
    let mut best = (f64::INFINITY, rates.len());
    for (j, &rate) in rates.iter().enumerate() {
        if rate <= 0.0 {
            continue;
        }
        let budget = if best.0.is_finite() {
            (best.0 * rate).floor() as u64 + 1
        } else {
            u64::MAX
        };
        if let Ok(sol) = pow_solve(&race_header(seed, trial, j), difficulty, 0, budget) {
            let t = sol.attempts as f64 / rate;
            if t < best.0 {
                best = (t, j);
            }
        }
    }
    best.1
}

/// Runs `trials` independent races. Trial `k` draws from the ChaCha stream
/// `(seed, k)`, so results are identical for every execution mode.
pub fn simulate_race(config: &RaceConfig) -> Result<RaceStats> {
    config.validate()?;
    let n = config.demands.len();
    let mut rates = config.demands.clone();
    rates.push(config.outside_power);
    let difficulty = match config.mode {
        RaceMode::HashRace => Some(Difficulty::new(config.difficulty_bits)?),
        RaceMode::AnalyticRace => None,
    };
    let base = ChaCha8Rng::seed_from_u64(config.seed);
    let blocks = config.trials.div_ceil(TRIAL_BLOCK) as usize;
    let partial = exec::map_range(config.execution, blocks, |b| {
        let mut counts = vec![0u64; n + 1];
        let first = b as u64 * TRIAL_BLOCK;
        let last = (first + TRIAL_BLOCK).min(config.trials);
        for trial in first..last {
            let winner = match difficulty {
                None => {
                    let mut rng = base.clone();
                    rng.set_stream(trial);
                    analytic_winner(&rates, &mut rng)
                }
                Some(d) => hash_winner(&rates, d, config.seed, trial),
            };
            counts[winner] += 1;
        }
        counts
    });
    let mut counts = vec![0u64; n + 1];
    for block in partial {
        for (c, b) in counts.iter_mut().zip(block) {
            *c += b;
        }
    }
    let outside_wins = counts.pop().unwrap_or(0);
    let trials = config.trials;
    let empirical_prob: Vec<f64> = counts.iter().map(|&c| c as f64 / trials as f64).collect();
    let ci95 = empirical_prob.iter().map(|&p| binomial_ci95(p, trials)).collect();
    let total: f64 = config.demands.iter().sum();
    let analytic_prob = win_probability_with(&config.demands, total, config.outside_power).probs;
    Ok(RaceStats {
        win_counts: counts,
        outside_wins,
        empirical_prob,
        analytic_prob,
        ci95,
        trials,
        seed: config.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinEstimate {
    pub prob: f64,
    pub ci95: f64,
}

pub fn estimate_win_prob(demands: &[f64], outside_power: f64, trials: u64, seed: u64) -> Result<Vec<WinEstimate>> {
    let config = RaceConfig {
        outside_power,
        ..RaceConfig::analytic(demands.to_vec(), trials, seed)
    };
    let stats = simulate_race(&config)?;
    Ok(stats
        .empirical_prob
        .iter()
        .zip(&stats.ci95)
        .map(|(&prob, &ci95)| WinEstimate { prob, ci95 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn within_band(stats: &RaceStats, k: f64) -> bool {
        (0..stats.empirical_prob.len())
            .all(|i| (stats.empirical_prob[i] - stats.analytic_prob[i]).abs() <= k * stats.analytic_sigma(i))
    }

    #[test]
    fn analytic_race_matches_shares() {
        let stats = simulate_race(&RaceConfig::analytic(vec![40.0, 60.0, 100.0], 100_000, 7)).unwrap();
        assert_eq!(stats.analytic_prob, vec![0.2, 0.3, 0.5]);
        assert_eq!(stats.win_counts.iter().sum::<u64>(), 100_000);
        assert!(within_band(&stats, 3.0), "{stats:?}");
        for (i, c) in stats.win_counts.iter().enumerate() {
            assert_eq!(stats.empirical_prob[i], *c as f64 / 1e5);
        }
    }

    #[test]
    fn single_trial_has_one_winner() {
        let stats = simulate_race(&RaceConfig::analytic(vec![1.0, 2.0], 1, 0)).unwrap();
        assert_eq!(stats.win_counts.iter().sum::<u64>() + stats.outside_wins, 1);
    }

    #[test]
    fn outside_power_takes_its_share() {
        let config = RaceConfig {
            outside_power: 100.0,
            ..RaceConfig::analytic(vec![100.0], 40_000, 3)
        };
        let stats = simulate_race(&config).unwrap();
        assert_eq!(stats.analytic_prob, vec![0.5]);
        assert_eq!(stats.win_counts[0] + stats.outside_wins, 40_000);
        assert!(within_band(&stats, 3.0));
    }

    #[test]
    fn race_is_deterministic_across_modes() {
        let seq = RaceConfig {
            execution: Execution::Sequential,
            ..RaceConfig::analytic(vec![3.0, 5.0, 0.0, 9.0], 10_000, 99)
        };
        let par = RaceConfig {
            execution: Execution::Parallel,
            ..seq.clone()
        };
        let a = simulate_race(&seq).unwrap();
        assert_eq!(a, simulate_race(&seq).unwrap());
        assert_eq!(a, simulate_race(&par).unwrap());
        assert_eq!(a.win_counts[2], 0);
    }

    #[test]
    fn hash_race_agrees_with_analytic_shares() {
        let config = RaceConfig {
            mode: RaceMode::HashRace,
            difficulty_bits: 8,
            ..RaceConfig::analytic(vec![40.0, 60.0], 3000, 5)
        };
        let stats = simulate_race(&config).unwrap();
        assert!(within_band(&stats, 3.0), "{stats:?}");
    }

    #[test]
    fn rejects_invalid_races() {
        assert!(simulate_race(&RaceConfig::analytic(vec![0.0, 0.0], 10, 0)).is_err());
        assert!(simulate_race(&RaceConfig::analytic(vec![1.0], 0, 0)).is_err());
        let bad = RaceConfig {
            mode: RaceMode::HashRace,
            difficulty_bits: 0,
            ..RaceConfig::analytic(vec![1.0], 10, 0)
        };
        assert!(simulate_race(&bad).is_err());
    }

    #[test]
    fn leading_zero_bit_count() {
        assert_eq!(leading_zero_bits(&[0, 0, 0x1f, 0xff]), 19);
        assert_eq!(leading_zero_bits(&[0x80]), 0);
        assert_eq!(leading_zero_bits(&[0; 4]), 32);
    }

    #[test]
    fn digest_encoding_is_fixed() {
        // SHA-256 of the single zero-length header followed by nonce 0 as
        // eight zero bytes.
        let d = pow_digest(b"", 0);
        assert_eq!(
            d.iter().map(|b| format!("{b:02x}")).collect::<String>(),
            "af5570f5a1810b7af78caf4bc70a660f0df51e42baf91d4de5b2328de0e83dfc"
        );
    }

    #[test]
    fn solve_and_verify_round_trip() {
        let d = Difficulty::new(1).unwrap();
        let sol = pow_solve(b"header", d, 0, 1000).unwrap();
        assert!(sol.digest[0] < 0x80);
        assert!(pow_verify(b"header", sol.nonce, d));
        assert_eq!(sol.attempts, sol.nonce + 1);

        let d12 = Difficulty::new(12).unwrap();
        let sol = pow_solve(b"block-7", d12, 0, u64::MAX).unwrap();
        assert!(pow_verify(b"block-7", sol.nonce, d12));
        assert!(leading_zero_bits(&sol.digest) >= 12);
        // every nonce before the solution fails
        assert!((0..sol.nonce).all(|n| !pow_verify(b"block-7", n, d12)));
        assert!(!pow_verify(b"block-7", sol.nonce + 1, d12));
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let d = Difficulty::new(40).unwrap();
        assert_eq!(
            pow_solve(b"x", d, 0, 10),
            Err(Error::NoSolutionWithinBudget { attempts: 10 })
        );
        assert!(Difficulty::new(0).is_err());
        assert!(Difficulty::new(65).is_err());
    }

    #[test]
    fn estimate_wraps_race() {
        let est = estimate_win_prob(&[40.0, 60.0, 100.0], 0.0, 20_000, 1).unwrap();
        assert_eq!(est.len(), 3);
        assert!((est[2].prob - 0.5).abs() < 3.0 * (0.25f64 / 2e4).sqrt());
        assert!((est[2].ci95 - binomial_ci95(est[2].prob, 20_000)).abs() < 1e-15);
    }
}
