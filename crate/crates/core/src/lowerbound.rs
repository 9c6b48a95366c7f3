//! Regret against the known-CTR second-price benchmark, and the pair of
//! near-indistinguishable four-ad instances on which every individually
//! rational mechanism must lose `Ω(√T)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::AuctionEnv;
use crate::error::{Error, Result};
use crate::mechanisms::{Mechanism, MechanismConfig, RunRecord};
use crate::stats::{CompensatedSum, MeanStat};

/// Per-round OPT (second-highest true eCPM) and its sum over the horizon.
pub fn opt_benchmark(env: &AuctionEnv) -> Result<(Vec<f64>, f64)> {
    let per_round = (1..=env.horizon())
        .map(|t| env.opt_at(t))
        .collect::<Result<Vec<_>>>()?;
    let total = per_round.iter().copied().collect::<CompensatedSum>().value();
    Ok((per_round, total))
}

/// OPT minus revenue, with OPT recomputed from the environment.
pub fn compute_regret(run: &RunRecord, env: &AuctionEnv) -> Result<f64> {
    if run.horizon != env.horizon() {
        return Err(Error::Inconsistent(format!(
            "run horizon {} differs from environment horizon {}",
            run.horizon,
            env.horizon()
        )));
    }
    let (_, opt) = opt_benchmark(env)?;
    Ok(opt + run.warmstart_opt - run.total_revenue)
}

/// Worst-case regret ceiling of the UCB auction:
/// `M · Σ_i sqrt(24 T ln(2nT)) / ρ_i + M / T`, with `M` the largest
/// per-round second-highest eCPM.
pub fn ucb_regret_ceiling(env: &AuctionEnv) -> Result<f64> {
    let m = env.max_opt_round()?;
    let t = env.horizon() as f64;
    let root = (24.0 * t * (2.0 * env.n() as f64 * t).ln()).sqrt();
    let sum: f64 = env.ctrs().iter().map(|c| root / c).sum();
    Ok(m * sum + m / t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundPair {
    pub horizon: usize,
    pub epsilon: f64,
    /// Ads 0 and 1 carry the `+ε/2` boost.
    pub env_1: AuctionEnv,
    /// Ads 2 and 3 carry the `+ε/2` boost.
    pub env_2: AuctionEnv,
}

/// Four ads of value 1 with CTRs `½` or `½ + ε/2`, `ε = 1/(8√T)`. Both
/// environments share `master_seed`, so coupled runs read the same tapes.
pub fn make_lb_pair(horizon: usize, master_seed: u64) -> Result<LowerBoundPair> {
    if horizon == 0 {
        return Err(Error::Domain("lower-bound horizon must be >= 1".into()));
    }
    let epsilon = 1.0 / (8.0 * (horizon as f64).sqrt());
    let hi = 0.5 + epsilon / 2.0;
    let values = vec![1.0; 4];
    Ok(LowerBoundPair {
        horizon,
        epsilon,
        env_1: AuctionEnv::fixed(vec![hi, hi, 0.5, 0.5], values.clone(), horizon, master_seed)?,
        env_2: AuctionEnv::fixed(vec![0.5, 0.5, hi, hi], values, horizon, master_seed)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub env_1: MeanStat,
    pub env_2: MeanStat,
    pub max_mean: f64,
    /// Standard error of whichever mean is larger.
    pub max_std_err: f64,
}

/// Regret of `mechanism` on `env` for runs `0..seeds`, in run order.
pub fn regrets(mechanism: Mechanism, env: &AuctionEnv, seeds: u64, config: &MechanismConfig) -> Result<Vec<f64>> {
    (0..seeds)
        .into_par_iter()
        .map(|run| mechanism.run_truthful(env, config, run).map(|r| r.total_regret))
        .collect()
}

/// Monte Carlo mean regret on both instances of the pair.
pub fn minimax_regret_probe(
    mechanism: Mechanism,
    pair: &LowerBoundPair,
    seeds: u64,
    config: &MechanismConfig,
) -> Result<ProbeResult> {
    if seeds == 0 {
        return Err(Error::Arity { min: 1, got: 0 });
    }
    let env_1 = MeanStat::from_samples(&regrets(mechanism, &pair.env_1, seeds, config)?)?;
    let env_2 = MeanStat::from_samples(&regrets(mechanism, &pair.env_2, seeds, config)?)?;
    let top = if env_1.mean >= env_2.mean { env_1 } else { env_2 };
    Ok(ProbeResult {
        env_1,
        env_2,
        max_mean: top.mean,
        max_std_err: top.std_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ValuationSchedule;

    #[test]
    fn opt_of_constant_schedule() {
        // eCPMs (0.5, 0.4)
        let env = AuctionEnv::fixed(vec![0.5, 0.4], vec![1.0, 1.0], 10, 0).unwrap();
        let (per, total) = opt_benchmark(&env).unwrap();
        assert!(per.iter().all(|&x| (x - 0.4).abs() < 1e-15));
        assert!((total - 4.0).abs() < 1e-12);
    }

    #[test]
    fn opt_of_intro_example() {
        // ρ = (0.5, 0.5), v = (1, 2): eCPMs (0.5, 1.0)
        let env = AuctionEnv::fixed(vec![0.5, 0.5], vec![1.0, 2.0], 1, 0).unwrap();
        assert_eq!(opt_benchmark(&env).unwrap().1, 0.5);
    }

    #[test]
    fn opt_of_adversarial_table() {
        // eCPMs (0.3, 0.2) then (0.1, 0.9) with ρ = 0.5 everywhere
        let table = vec![vec![0.6, 0.4], vec![0.2, 1.8]];
        let env =
            AuctionEnv::new(vec![0.5, 0.5], ValuationSchedule::Adversarial(table), 2, 0).unwrap();
        assert!((opt_benchmark(&env).unwrap().1 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn pair_construction() {
        let p = make_lb_pair(64, 1).unwrap();
        assert_eq!(p.epsilon, 1.0 / 64.0);
        assert_eq!(p.env_1.ctrs()[0], 0.507_812_5);
        let p = make_lb_pair(1, 1).unwrap();
        assert_eq!(p.epsilon, 0.125);
        let mut a = p.env_1.gap_profile().unwrap().ecpm;
        let mut b = p.env_2.gap_profile().unwrap().ecpm;
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        assert!(make_lb_pair(0, 1).is_err());
    }

    #[test]
    fn probe_needs_seeds() {
        let p = make_lb_pair(16, 0).unwrap();
        assert_eq!(
            minimax_regret_probe(Mechanism::Ucb, &p, 0, &MechanismConfig::default()),
            Err(Error::Arity { min: 1, got: 0 })
        );
    }

    #[test]
    fn horizon_mismatch() {
        let env = AuctionEnv::fixed(vec![0.5, 0.4], vec![1.0, 1.0], 10, 0).unwrap();
        let run = Mechanism::Oracle
            .run_truthful(&env, &MechanismConfig::default(), 0)
            .unwrap();
        let other = env.with_horizon(11).unwrap();
        assert!(matches!(compute_regret(&run, &other), Err(Error::Inconsistent(_))));
    }
}
