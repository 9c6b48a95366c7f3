//! Pay-per-click second-price auctions: the known-CTR oracle, the UCB
//! auction and the explore-then-commit auction.
//!
//! Every auction ranks ads by `weight_i · bid_i` where the weight is a CTR
//! (true, upper confidence bound, or frozen), shows the top ad and charges it
//! `weight_B · bid_B / weight_A` per click. Losers pay nothing.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bidders::BidProfile;
use crate::env::AuctionEnv;
use crate::error::{Error, Result};
use crate::rng::ClickStream;
use crate::stats::{top_two, BonusVariant, CompensatedSum, EstimatorSnapshot, EstimatorState};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accounting {
    /// Revenue is `ρ_winner · price`; clicks are still drawn to drive learning.
    #[default]
    Expected,
    /// Revenue is `click · price`.
    Realized,
}

/// When explore-then-commit stops exploring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtcTermination {
    /// Stop after the first full cycle in which one ad's value-weighted LCB
    /// beats every other ad's value-weighted UCB.
    #[default]
    ClearWinner,
    /// Stop after a fixed number of round-robin cycles without looking at
    /// values, then freeze every ad's UCB.
    FixedBudget { cycles: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MechanismConfig {
    pub bonus_variant: BonusVariant,
    pub accounting: Accounting,
    /// Count the UCB auction's free warm-start impressions in OPT.
    pub include_warmstart_in_regret: bool,
    /// Keep per-round outcomes and estimator snapshots.
    pub trace: bool,
    pub etc_termination: EtcTermination,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        Self {
            bonus_variant: BonusVariant::default(),
            accounting: Accounting::default(),
            include_warmstart_in_regret: false,
            trace: false,
            etc_termination: EtcTermination::default(),
        }
    }
}

impl MechanismConfig {
    pub fn traced(mut self) -> Self {
        self.trace = true;
        self
    }

    pub fn with_accounting(mut self, accounting: Accounting) -> Self {
        self.accounting = accounting;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Oracle,
    Ucb,
    Etc,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Oracle => "oracle",
            Mechanism::Ucb => "ucb",
            Mechanism::Etc => "etc",
        })
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Mechanism::Oracle),
            "ucb" => Ok(Mechanism::Ucb),
            "etc" => Ok(Mechanism::Etc),
            other => Err(Error::Domain(format!("unknown mechanism {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// A free impression chosen without looking at bids.
    Exploration,
    Auction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub winner: usize,
    pub runner_up: usize,
    pub price_per_click: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: usize,
    pub phase: Phase,
    pub winner: usize,
    pub runner_up: Option<usize>,
    /// `None` when no click was drawn.
    pub click: Option<bool>,
    pub price_per_click: f64,
    /// `ρ_winner · price` under expected accounting, `click · price` otherwise.
    pub expected_payment: f64,
    pub opt_round: f64,
    pub regret_round: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mechanism: Mechanism,
    pub horizon: usize,
    pub outcomes: Option<Vec<RoundOutcome>>,
    /// Estimator state at the start of each auction round (UCB only).
    pub snapshots: Option<Vec<EstimatorSnapshot>>,
    pub total_revenue: f64,
    /// OPT over the horizon plus `warmstart_opt`.
    pub total_opt: f64,
    pub total_regret: f64,
    /// OPT charged for warm-start impressions; zero unless configured.
    pub warmstart_opt: f64,
    pub exploration_rounds: Option<usize>,
    pub committed: bool,
    pub clear_winner: Option<usize>,
    pub frozen_scores: Option<Vec<f64>>,
    pub terminal: EstimatorState,
}

/// Second-price allocation on scores `weight_i · bid_i`, lowest index on ties.
pub fn second_price(weights: &[f64], bids: &[f64]) -> Result<Allocation> {
    if weights.len() != bids.len() {
        return Err(Error::Inconsistent(format!(
            "{} weights for {} bids",
            weights.len(),
            bids.len()
        )));
    }
    let scores: Vec<f64> = weights.iter().zip(bids).map(|(w, b)| w * b).collect();
    let (winner, runner_up) = top_two(&scores)?;
    let price_per_click = if scores[winner] > 0.0 {
        scores[runner_up].max(0.0) / weights[winner]
    } else {
        0.0
    };
    Ok(Allocation {
        winner,
        runner_up,
        price_per_click,
    })
}

fn payment(accounting: Accounting, ctr: f64, price: f64, click: Option<bool>) -> f64 {
    match (accounting, click) {
        (Accounting::Expected, _) => ctr * price,
        (Accounting::Realized, Some(true)) => price,
        (Accounting::Realized, _) => 0.0,
    }
}

/// The known-CTR pay-per-click second-price auction on one round's bids.
///
/// `opt_round` is the second-highest `ρ_i · b_i`, which is OPT whenever bids
/// are truthful, so the outcome's regret is zero up to rounding.
pub fn oracle_spa_round(ctrs: &[f64], bids: &[f64]) -> Result<RoundOutcome> {
    let alloc = second_price(ctrs, bids)?;
    let scores: Vec<f64> = ctrs.iter().zip(bids).map(|(c, b)| c * b).collect();
    let opt = scores[alloc.runner_up];
    let paid = ctrs[alloc.winner] * alloc.price_per_click;
    Ok(RoundOutcome {
        round: 0,
        phase: Phase::Auction,
        winner: alloc.winner,
        runner_up: Some(alloc.runner_up),
        click: None,
        price_per_click: alloc.price_per_click,
        expected_payment: paid,
        opt_round: opt,
        regret_round: opt - paid,
    })
}

/// One auction round of round `t` on the given score weights. The click is
/// drawn when `draw_click` is set or when accounting is realized.
pub fn scored_round(
    weights: &[f64],
    bids: &[f64],
    env: &AuctionEnv,
    t: usize,
    accounting: Accounting,
    stream: &mut ClickStream,
    draw_click: bool,
) -> Result<RoundOutcome> {
    let alloc = second_price(weights, bids)?;
    let click = if draw_click || accounting == Accounting::Realized {
        Some(env.sample_click(alloc.winner, stream)?)
    } else {
        None
    };
    let paid = payment(accounting, env.ctrs()[alloc.winner], alloc.price_per_click, click);
    let opt = env.opt_at(t)?;
    Ok(RoundOutcome {
        round: t,
        phase: Phase::Auction,
        winner: alloc.winner,
        runner_up: Some(alloc.runner_up),
        click,
        price_per_click: alloc.price_per_click,
        expected_payment: paid,
        opt_round: opt,
        regret_round: opt - paid,
    })
}

/// One round of the UCB auction. Only the winner's estimate is updated.
pub fn ucb_round(
    state: &mut EstimatorState,
    bids: &[f64],
    env: &AuctionEnv,
    t: usize,
    config: &MechanismConfig,
    stream: &mut ClickStream,
) -> Result<RoundOutcome> {
    if let Some(cold) = state.pulls().iter().position(|&p| p == 0) {
        return Err(Error::NotWarm(cold));
    }
    let ucbs = state.ucbs()?;
    let out = scored_round(&ucbs, bids, env, t, config.accounting, stream, true)?;
    state.update(out.winner, out.click == Some(true))?;
    Ok(out)
}

/// One committed round of explore-then-commit on frozen scores.
pub fn etc_frozen_round(
    frozen: &[f64],
    bids: &[f64],
    env: &AuctionEnv,
    t: usize,
    config: &MechanismConfig,
    stream: &mut ClickStream,
) -> Result<RoundOutcome> {
    scored_round(frozen, bids, env, t, config.accounting, stream, false)
}

/// The ad whose value-weighted LCB strictly beats every other ad's
/// value-weighted UCB, if there is one.
pub fn clear_winner(lcbs: &[f64], ucbs: &[f64], values: &[f64]) -> Option<usize> {
    (0..values.len()).find(|&i| {
        let floor = values[i] * lcbs[i];
        (0..values.len()).all(|j| j == i || floor > values[j] * ucbs[j])
    })
}

/// Upper bound on per-ad exploration pulls of explore-then-commit when the
/// confidence event holds: `3 ln(2nT) / (2 d²) + 1` with
/// `d = min_j (ρ₁v₁ − ρ_j v_j) / (2 (v₁ + v_j))`.
pub fn etc_exploration_pull_cap(env: &AuctionEnv) -> Result<f64> {
    let values = env.fixed_values()?;
    let gaps = env.gap_profile()?;
    let best = gaps.best_index;
    let d = (0..env.n())
        .filter(|&j| j != best)
        .map(|j| (gaps.ecpm[best] - gaps.ecpm[j]) / (2.0 * (values[best] + values[j])))
        .fold(f64::INFINITY, f64::min);
    let log = (2.0 * env.n() as f64 * env.horizon() as f64).ln();
    Ok(3.0 * log / (2.0 * d * d) + 1.0)
}

#[derive(Default)]
struct Ledger {
    revenue: CompensatedSum,
    opt: CompensatedSum,
    outcomes: Option<Vec<RoundOutcome>>,
    snapshots: Option<Vec<EstimatorSnapshot>>,
}

impl Ledger {
    fn new(trace: bool, snapshots: bool) -> Self {
        Self {
            outcomes: trace.then(Vec::new),
            snapshots: (trace && snapshots).then(Vec::new),
            ..Self::default()
        }
    }

    fn record(&mut self, out: RoundOutcome) {
        self.revenue.add(out.expected_payment);
        self.opt.add(out.opt_round);
        if let Some(o) = self.outcomes.as_mut() {
            o.push(out);
        }
    }

    fn snapshot(&mut self, state: &EstimatorState) {
        if let Some(s) = self.snapshots.as_mut() {
            s.push(state.snapshot());
        }
    }

    fn finish(self, mechanism: Mechanism, horizon: usize, warmstart_opt: f64, terminal: EstimatorState) -> RunRecord {
        let total_revenue = self.revenue.value();
        let total_opt = self.opt.value() + warmstart_opt;
        RunRecord {
            mechanism,
            horizon,
            outcomes: self.outcomes,
            snapshots: self.snapshots,
            total_revenue,
            total_opt,
            total_regret: total_opt - total_revenue,
            warmstart_opt,
            exploration_rounds: None,
            committed: false,
            clear_winner: None,
            frozen_scores: None,
            terminal,
        }
    }
}

fn check_bidders(env: &AuctionEnv, bids: &BidProfile) -> Result<()> {
    if bids.n() != env.n() {
        return Err(Error::Inconsistent(format!(
            "{} bid policies for {} ads",
            bids.n(),
            env.n()
        )));
    }
    Ok(())
}

pub fn oracle_run(env: &AuctionEnv, config: &MechanismConfig, bids: &BidProfile, run: u64) -> Result<RunRecord> {
    check_bidders(env, bids)?;
    let mut stream = ClickStream::new(env.master_seed(), run, env.n());
    let mut ledger = Ledger::new(config.trace, false);
    for t in 1..=env.horizon() {
        let values = env.value_at(t)?;
        let b = bids.bids_at(values, t)?;
        let out = scored_round(env.ctrs(), &b, env, t, config.accounting, &mut stream, false)?;
        ledger.record(out);
    }
    let terminal = EstimatorState::new(env.n(), env.horizon(), config.bonus_variant)?;
    Ok(ledger.finish(Mechanism::Oracle, env.horizon(), 0.0, terminal))
}

fn warm_round_opt(env: &AuctionEnv) -> Result<f64> {
    if env.horizon() >= 1 {
        env.opt_at(1)
    } else {
        env.max_opt_round()
    }
}

/// The UCB auction: one free impression per ad, then `T` auction rounds.
pub fn ucb_auction_run(env: &AuctionEnv, config: &MechanismConfig, bids: &BidProfile, run: u64) -> Result<RunRecord> {
    check_bidders(env, bids)?;
    let n = env.n();
    let mut stream = ClickStream::new(env.master_seed(), run, n);
    let mut state = EstimatorState::new(n, env.horizon(), config.bonus_variant)?;
    for ad in 0..n {
        let click = env.sample_click(ad, &mut stream)?;
        state.update(ad, click)?;
    }
    let warmstart_opt = if config.include_warmstart_in_regret {
        n as f64 * warm_round_opt(env)?
    } else {
        0.0
    };
    let mut ledger = Ledger::new(config.trace, true);
    for t in 1..=env.horizon() {
        ledger.snapshot(&state);
        let b = bids.bids_at(env.value_at(t)?, t)?;
        let out = ucb_round(&mut state, &b, env, t, config, &mut stream)?;
        ledger.record(out);
    }
    Ok(ledger.finish(Mechanism::Ucb, env.horizon(), warmstart_opt, state))
}

/// Explore-then-commit. Exploration impressions are rounds of the horizon
/// with zero revenue; if the horizon runs out first the record has
/// `committed == false`.
pub fn etc_run(env: &AuctionEnv, config: &MechanismConfig, bids: &BidProfile, run: u64) -> Result<RunRecord> {
    check_bidders(env, bids)?;
    let values = env.fixed_values()?;
    let n = env.n();
    let horizon = env.horizon();
    let mut stream = ClickStream::new(env.master_seed(), run, n);
    let mut state = EstimatorState::new(n, horizon, config.bonus_variant)?;
    let mut ledger = Ledger::new(config.trace, false);

    let mut t = 0;
    let mut cycles = 0;
    let mut commitment: Option<(Option<usize>, Vec<f64>)> = None;
    'explore: while t < horizon {
        for ad in 0..n {
            if t == horizon {
                break 'explore;
            }
            t += 1;
            let click = env.sample_click(ad, &mut stream)?;
            state.update(ad, click)?;
            let opt = env.opt_at(t)?;
            ledger.record(RoundOutcome {
                round: t,
                phase: Phase::Exploration,
                winner: ad,
                runner_up: None,
                click: Some(click),
                price_per_click: 0.0,
                expected_payment: 0.0,
                opt_round: opt,
                regret_round: opt,
            });
        }
        cycles += 1;
        let ucbs = state.ucbs()?;
        match config.etc_termination {
            EtcTermination::ClearWinner => {
                let lcbs = state.lcbs()?;
                if let Some(w) = clear_winner(&lcbs, &ucbs, values) {
                    let mut frozen = ucbs;
                    frozen[w] = lcbs[w];
                    commitment = Some((Some(w), frozen));
                    break;
                }
            }
            EtcTermination::FixedBudget { cycles: budget } => {
                if cycles >= budget {
                    commitment = Some((None, ucbs));
                    break;
                }
            }
        }
    }
    let exploration_rounds = t;

    let (committed, winner, frozen) = match commitment {
        Some((winner, frozen)) => {
            for t in exploration_rounds + 1..=horizon {
                let b = bids.bids_at(env.value_at(t)?, t)?;
                let out = etc_frozen_round(&frozen, &b, env, t, config, &mut stream)?;
                ledger.record(out);
            }
            (true, winner, Some(frozen))
        }
        None => (false, None, None),
    };

    let mut record = ledger.finish(Mechanism::Etc, horizon, 0.0, state);
    record.exploration_rounds = Some(exploration_rounds);
    record.committed = committed;
    record.clear_winner = winner;
    record.frozen_scores = frozen;
    Ok(record)
}

impl Mechanism {
    pub fn run(self, env: &AuctionEnv, config: &MechanismConfig, bids: &BidProfile, run: u64) -> Result<RunRecord> {
        match self {
            Mechanism::Oracle => oracle_run(env, config, bids, run),
            Mechanism::Ucb => ucb_auction_run(env, config, bids, run),
            Mechanism::Etc => etc_run(env, config, bids, run),
        }
    }

    pub fn run_truthful(self, env: &AuctionEnv, config: &MechanismConfig, run: u64) -> Result<RunRecord> {
        self.run(env, config, &BidProfile::truthful(env.n()), run)
    }
}
