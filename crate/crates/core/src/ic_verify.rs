//! Incentive-compatibility certificates.
//!
//! Per-round (stage) truthfulness is checked by exhaustive deviation search:
//! with scores that do not depend on the ad's own bid, its expected utility
//! is piecewise linear in the bid with a single breakpoint at the winning
//! threshold, so a grid holding the breakpoint, its neighbouring floats and
//! the true value is a complete certificate. The payment rule is checked
//! against the monotone-allocation payment identity
//! `p(b) = b·x(b) − ∫₀ᵇ x(z) dz`. Horizon-level truthfulness is checked by
//! replaying whole runs with and without a deviation on the same click tape.

use serde::{Deserialize, Serialize};

use crate::bidders::{BidPolicy, BidProfile};
use crate::env::AuctionEnv;
use crate::error::{check_index, Error, Result};
use crate::mechanisms::{second_price, Mechanism, MechanismConfig, Phase, RunRecord};
use crate::stats::CompensatedSum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    /// Best deviation utility minus truthful utility. At most zero for a
    /// truthful mechanism.
    pub max_gain: f64,
    /// Bid attaining `max_gain`.
    pub argmax_bid: f64,
    pub truthful_utility: f64,
    pub bids_checked: usize,
    pub tolerance: f64,
}

impl DeviationReport {
    pub fn passes(&self) -> bool {
        self.max_gain <= self.tolerance
    }
}

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Lowest own bid at which `ad` ties the best rival score.
pub fn winning_threshold(scores: &[f64], bids: &[f64], ad: usize) -> Result<f64> {
    check_index("ad", ad, scores.len())?;
    if scores[ad] <= 0.0 {
        return Err(Error::Domain(format!("ad {ad} has non-positive score weight")));
    }
    let rival = (0..scores.len())
        .filter(|&j| j != ad)
        .map(|j| scores[j] * bids[j])
        .fold(0.0, f64::max);
    Ok(rival / scores[ad])
}

/// `ad`'s expected utility when it bids `bid` and the others bid `bids`,
/// computed through the mechanism's own allocation and price rule.
pub fn expected_utility(scores: &[f64], bids: &[f64], ad: usize, bid: f64, value: f64, ctr: f64) -> Result<f64> {
    let mut b = bids.to_vec();
    b[ad] = bid;
    let alloc = second_price(scores, &b)?;
    Ok(if alloc.winner == ad {
        ctr * (value - alloc.price_per_click)
    } else {
        0.0
    })
}

/// Evenly spaced bids on `[0, 2·value]`.
pub fn bid_grid(value: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![value],
        _ => (0..points)
            .map(|k| 2.0 * value * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Largest utility gain `ad` can get in one round by misreporting.
///
/// `bids` holds every ad's bid; `ad`'s own entry is ignored.
pub fn stage_ic_check(
    scores: &[f64],
    bids: &[f64],
    ad: usize,
    value: f64,
    ctr: f64,
    grid: &[f64],
) -> Result<DeviationReport> {
    if grid.is_empty() {
        return Err(Error::Arity { min: 1, got: 0 });
    }
    if scores.len() != bids.len() {
        return Err(Error::Inconsistent("scores and bids differ in length".into()));
    }
    let threshold = winning_threshold(scores, bids, ad)?;
    let mut candidates: Vec<f64> = grid.to_vec();
    candidates.extend([threshold, threshold.next_up(), threshold.next_down()]);
    candidates.retain(|b| *b >= 0.0 && b.is_finite());

    let truthful = expected_utility(scores, bids, ad, value, value, ctr)?;
    let mut best = (f64::NEG_INFINITY, value);
    for &b in &candidates {
        let gain = expected_utility(scores, bids, ad, b, value, ctr)? - truthful;
        if gain > best.0 {
            best = (gain, b);
        }
    }
    Ok(DeviationReport {
        max_gain: best.0,
        argmax_bid: best.1,
        truthful_utility: truthful,
        bids_checked: candidates.len() + 1,
        tolerance: DEFAULT_TOLERANCE,
    })
}

/// Win indicator of `ad` at each grid bid; must be nondecreasing.
pub fn allocation_profile(scores: &[f64], bids: &[f64], ad: usize, grid: &[f64]) -> Result<Vec<bool>> {
    let mut b = bids.to_vec();
    grid.iter()
        .map(|&x| {
            b[ad] = x;
            Ok(second_price(scores, &b)?.winner == ad)
        })
        .collect()
}

/// Expected payment minus `b·x(b) − ∫₀ᵇ x(z) dz`, where `x` is the
/// click-weighted allocation: `0` below the threshold, `ctr` above it.
pub fn myerson_identity_residual(scores: &[f64], bids: &[f64], ad: usize, ctr: f64) -> Result<f64> {
    let bid = bids[ad];
    let alloc = second_price(scores, bids)?;
    let wins = alloc.winner == ad;
    let paid = if wins { ctr * alloc.price_per_click } else { 0.0 };

    let threshold = winning_threshold(scores, bids, ad)?;
    let x_at_bid = if wins { ctr } else { 0.0 };
    let integral = ctr * (bid - threshold).max(0.0);
    Ok(paid - (bid * x_at_bid - integral))
}

/// Sum over the run of `ad`'s expected utility: `ρ·(v − price)` when it wins
/// an auction round, `ρ·v` for a free exploration impression.
pub fn run_utility(run: &RunRecord, env: &AuctionEnv, ad: usize) -> Result<f64> {
    let outcomes = run.outcomes.as_ref().ok_or(Error::MissingSnapshots)?;
    let ctr = env.ctrs()[ad];
    let mut acc = CompensatedSum::default();
    for out in outcomes.iter().filter(|o| o.winner == ad) {
        let value = env.value_at(out.round)?[ad];
        let price = match out.phase {
            Phase::Exploration => 0.0,
            Phase::Auction => out.price_per_click,
        };
        acc.add(ctr * (value - price));
    }
    Ok(acc.value())
}

/// Utility change for `ad` from following `deviation` instead of bidding
/// truthfully, with both histories drawn from the same click tapes.
pub fn global_ic_check(
    mechanism: Mechanism,
    env: &AuctionEnv,
    ad: usize,
    deviation: BidPolicy,
    config: &MechanismConfig,
    run: u64,
) -> Result<f64> {
    let config = config.traced();
    let deviated = BidProfile::single_deviation(env.n(), ad, deviation, env.horizon())?;
    let truthful_run = mechanism.run_truthful(env, &config, run)?;
    let deviated_run = mechanism.run(env, &config, &deviated, run)?;
    Ok(run_utility(&deviated_run, env, ad)? - run_utility(&truthful_run, env, ad)?)
}

/// The scripted deviations used for horizon-level checks on `env`.
pub fn deviation_families(env: &AuctionEnv) -> Vec<(String, BidPolicy)> {
    let horizon = env.horizon().max(1);
    let early = (4 * env.n()).min(horizon);
    let late_from = (horizon / 2).max(1);
    vec![
        ("truthful".into(), BidPolicy::Truthful),
        ("scaled_0.5".into(), BidPolicy::ScaledBid { factor: 0.5 }),
        ("scaled_1.5".into(), BidPolicy::ScaledBid { factor: 1.5 }),
        ("scaled_3".into(), BidPolicy::ScaledBid { factor: 3.0 }),
        (
            "zero_early".into(),
            BidPolicy::FixedDeviation {
                from: 1,
                to: early,
                bid: 0.0,
            },
        ),
        (
            "overbid_early".into(),
            BidPolicy::FixedDeviation {
                from: 1,
                to: early,
                bid: 10.0,
            },
        ),
        (
            "zero_late".into(),
            BidPolicy::FixedDeviation {
                from: late_from,
                to: horizon,
                bid: 0.0,
            },
        ),
        (
            "overbid_late".into(),
            BidPolicy::FixedDeviation {
                from: late_from,
                to: horizon,
                bid: 10.0,
            },
        ),
        ("zero_then_truthful".into(), BidPolicy::ZeroThenTruthful { switch: late_from }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truthful_winner_example() {
        // own estimate 0.8, one rival with frozen score 0.4 (estimate 0.4, bid 1)
        let scores = [0.8, 0.4];
        let bids = [f64::NAN, 1.0];
        let r = stage_ic_check(&scores, &bids, 0, 1.0, 0.7, &bid_grid(1.0, 101)).unwrap();
        assert!((r.truthful_utility - 0.7 * 0.5).abs() < 1e-15);
        assert!(r.passes(), "{r:?}");
        assert_eq!(expected_utility(&scores, &[0.0, 1.0], 0, 0.4, 1.0, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn truthful_loser_example() {
        let scores = [0.5, 0.9];
        let bids = [0.0, 1.0];
        // threshold 1.8; value 1.0 loses
        let r = stage_ic_check(&scores, &bids, 0, 1.0, 0.5, &bid_grid(1.0, 101)).unwrap();
        assert_eq!(r.truthful_utility, 0.0);
        assert_eq!(r.max_gain, 0.0);
        assert!(expected_utility(&scores, &bids, 0, 2.0, 1.0, 0.5).unwrap() < 0.0);
    }

    #[test]
    fn free_win_example() {
        let scores = [0.6, 0.9];
        let bids = [0.0, 0.0];
        let r = stage_ic_check(&scores, &bids, 0, 1.0, 0.6, &bid_grid(1.0, 11)).unwrap();
        assert!((r.truthful_utility - 0.6).abs() < 1e-15);
        assert!(r.max_gain <= 0.0);
    }

    #[test]
    fn empty_grid() {
        assert_eq!(
            stage_ic_check(&[0.5, 0.5], &[1.0, 1.0], 0, 1.0, 0.5, &[]),
            Err(Error::Arity { min: 1, got: 0 })
        );
    }

    #[test]
    fn myerson_examples() {
        // losing ad
        let r = myerson_identity_residual(&[0.5, 0.9], &[1.0, 1.0], 0, 0.5).unwrap();
        assert_eq!(r, 0.0);
        // winning ad strictly above threshold 0.5
        let r = myerson_identity_residual(&[0.8, 0.4], &[1.0, 1.0], 0, 0.7).unwrap();
        assert!(r.abs() < 1e-12);
        // exactly at threshold, both tie orientations
        let r = myerson_identity_residual(&[0.5, 0.5], &[1.0, 1.0], 0, 0.5).unwrap();
        assert!(r.abs() < 1e-12);
        let r = myerson_identity_residual(&[0.5, 0.5], &[1.0, 1.0], 1, 0.5).unwrap();
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn allocation_is_monotone() {
        let grid = bid_grid(1.0, 101);
        let wins = allocation_profile(&[0.7, 0.6, 0.9], &[0.0, 1.0, 0.5], 0, &grid).unwrap();
        assert!(wins.windows(2).all(|w| w[0] <= w[1]));
        assert!(!wins[0] && wins[100]);
    }
}
