//! Confidence bounds, top-two selection and the CTR estimator.
//!
//! Logarithms are natural throughout.

use serde::{Deserialize, Serialize};

use crate::env::AuctionEnv;
use crate::error::{check_index, Error, Result};
use crate::mechanisms::RunRecord;

/// Which logarithm sits under the exploration bonus `sqrt(3 ln(·) / 2N)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusVariant {
    /// `ln(2nT)`, the form every confidence argument about the mechanism uses.
    #[default]
    AnalysisLog2nT,
    /// `ln T`, as written in the mechanism's pseudocode.
    PaperLiteralLogT,
}

impl BonusVariant {
    /// `3 ln(·) / 2`, the numerator of the squared bonus.
    fn scale(self, horizon: f64, n: usize) -> Result<f64> {
        if !(horizon >= 1.0) {
            return Err(Error::Domain(format!("horizon {horizon} must be >= 1")));
        }
        let log = match self {
            BonusVariant::AnalysisLog2nT => (2.0 * n as f64 * horizon).ln(),
            BonusVariant::PaperLiteralLogT => horizon.ln(),
        };
        Ok(1.5 * log)
    }
}

pub fn ucb_bonus(pulls: u64, horizon: f64, n: usize, variant: BonusVariant) -> Result<f64> {
    if pulls == 0 {
        return Err(Error::ZeroPulls);
    }
    Ok((variant.scale(horizon, n)? / pulls as f64).sqrt())
}

/// One-sided Hoeffding tail `exp(-2 k t²)` for the mean of `k` samples in `[0, 1]`.
pub fn hoeffding_bound(k: u64, t: f64) -> f64 {
    (-2.0 * k as f64 * t * t).exp()
}

/// Indices of the largest and second-largest entries. Ties go to the lower
/// index, so with duplicated maxima the runner-up carries the same value.
pub fn top_two(values: &[f64]) -> Result<(usize, usize)> {
    if values.len() < 2 {
        return Err(Error::Arity {
            min: 2,
            got: values.len(),
        });
    }
    let (mut first, mut second) = if values[1] > values[0] { (1, 0) } else { (0, 1) };
    for (i, &v) in values.iter().enumerate().skip(2) {
        if v > values[first] {
            second = first;
            first = i;
        } else if v > values[second] {
            second = i;
        }
    }
    Ok((first, second))
}

pub fn argmax(values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::Arity { min: 1, got: 0 });
    }
    Ok(values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > values[best] { i } else { best }))
}

pub fn argsmax(values: &[f64]) -> Result<usize> {
    top_two(values).map(|(_, s)| s)
}

/// Second-largest value, where a duplicated maximum counts twice.
pub fn smax(values: &[f64]) -> Result<f64> {
    argsmax(values).map(|s| values[s])
}

/// Per-ad pull counts and empirical CTRs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    pulls: Vec<u64>,
    means: Vec<f64>,
    variant: BonusVariant,
    horizon: usize,
    // cached 3 ln(·) / 2
    scale: f64,
}

/// Copy of the estimator taken at the start of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSnapshot {
    pub pulls: Vec<u64>,
    pub means: Vec<f64>,
}

impl EstimatorState {
    pub fn new(n: usize, horizon: usize, variant: BonusVariant) -> Result<Self> {
        let scale = variant.scale(horizon.max(1) as f64, n)?;
        Ok(Self {
            pulls: vec![0; n],
            means: vec![0.0; n],
            variant,
            horizon,
            scale,
        })
    }

    pub fn from_snapshot(
        snap: &EstimatorSnapshot,
        horizon: usize,
        variant: BonusVariant,
    ) -> Result<Self> {
        if snap.pulls.len() != snap.means.len() {
            return Err(Error::Inconsistent("snapshot lengths differ".into()));
        }
        let mut state = Self::new(snap.pulls.len(), horizon, variant)?;
        state.pulls.clone_from(&snap.pulls);
        state.means.clone_from(&snap.means);
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.pulls.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn variant(&self) -> BonusVariant {
        self.variant
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn total_pulls(&self) -> u64 {
        self.pulls.iter().sum()
    }

    pub fn is_warm(&self) -> bool {
        self.pulls.iter().all(|&p| p > 0)
    }

    pub fn snapshot(&self) -> EstimatorSnapshot {
        EstimatorSnapshot {
            pulls: self.pulls.clone(),
            means: self.means.clone(),
        }
    }

    pub fn bonus(&self, ad: usize) -> Result<f64> {
        check_index("ad", ad, self.n())?;
        match self.pulls[ad] {
            0 => Err(Error::ZeroPulls),
            p => Ok((self.scale / p as f64).sqrt()),
        }
    }

    pub fn ucb(&self, ad: usize) -> Result<f64> {
        Ok(self.means[ad] + self.bonus(ad)?)
    }

    pub fn lcb(&self, ad: usize) -> Result<f64> {
        Ok(self.means[ad] - self.bonus(ad)?)
    }

    pub fn ucbs(&self) -> Result<Vec<f64>> {
        (0..self.n()).map(|i| self.ucb(i)).collect()
    }

    pub fn lcbs(&self) -> Result<Vec<f64>> {
        (0..self.n()).map(|i| self.lcb(i)).collect()
    }

    /// Running-average update for the shown ad; every other ad is untouched.
    pub fn update(&mut self, ad: usize, click: bool) -> Result<()> {
        check_index("ad", ad, self.n())?;
        self.pulls[ad] += 1;
        let w = 1.0 / self.pulls[ad] as f64;
        let x = if click { 1.0 } else { 0.0 };
        self.means[ad] = (1.0 - w) * self.means[ad] + w * x;
        Ok(())
    }
}

/// Per-round outcome of the confidence event `0 <= UCB_i - ρ_i <= 2·bonus_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub per_round: Vec<bool>,
    pub overall: bool,
}

pub fn confidence_event_holds(run: &RunRecord, env: &AuctionEnv) -> Result<CoverageReport> {
    let snaps = run.snapshots.as_ref().ok_or(Error::MissingSnapshots)?;
    let variant = run.terminal.variant();
    let horizon = run.terminal.horizon();
    let per_round = snaps
        .iter()
        .map(|snap| snapshot_covers(snap, env.ctrs(), horizon, variant))
        .collect::<Result<Vec<_>>>()?;
    let overall = per_round.iter().all(|&b| b);
    Ok(CoverageReport { per_round, overall })
}

pub fn snapshot_covers(
    snap: &EstimatorSnapshot,
    ctrs: &[f64],
    horizon: usize,
    variant: BonusVariant,
) -> Result<bool> {
    if snap.pulls.len() != ctrs.len() {
        return Err(Error::Inconsistent(format!(
            "snapshot has {} ads, environment has {}",
            snap.pulls.len(),
            ctrs.len()
        )));
    }
    let state = EstimatorState::from_snapshot(snap, horizon, variant)?;
    for (i, &ctr) in ctrs.iter().enumerate() {
        let bonus = state.bonus(i)?;
        let err = state.ucb(i)? - ctr;
        if !(0.0..=2.0 * bonus).contains(&err) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `6 ln(2nT) / Δ²`, the cap on how often a suboptimal ad with gap `Δ` is shown.
pub fn pull_count_cap(n: usize, horizon: usize, delta: f64) -> f64 {
    6.0 * (2.0 * n as f64 * horizon as f64).ln() / (delta * delta)
}

/// True when every suboptimal ad's terminal pull count respects [`pull_count_cap`].
pub fn pull_counts_within_cap(run: &RunRecord, env: &AuctionEnv) -> Result<bool> {
    let gaps = env.gap_profile()?;
    let pulls = run.terminal.pulls();
    Ok((0..env.n()).filter(|&i| i != gaps.best_index).all(|i| {
        pulls[i] as f64 <= pull_count_cap(env.n(), env.horizon(), gaps.deltas[i])
    }))
}

/// Counts, over rounds won by the best ad, how often the runner-up's UCB
/// exceeds its true CTR by at least `margin·Δ_s`. Returns `(hits, rounds)`.
pub fn runner_up_overshoot(run: &RunRecord, env: &AuctionEnv, margin: f64) -> Result<(u64, u64)> {
    let snaps = run.snapshots.as_ref().ok_or(Error::MissingSnapshots)?;
    let outcomes = run.outcomes.as_ref().ok_or(Error::MissingSnapshots)?;
    let gaps = env.gap_profile()?;
    let s = gaps.runner_up_index;
    let target = env.ctrs()[s] + margin * gaps.deltas[s];
    let horizon = run.terminal.horizon();
    let variant = run.terminal.variant();
    let (mut hits, mut total) = (0, 0);
    for (snap, out) in snaps.iter().zip(outcomes) {
        if out.winner != gaps.best_index {
            continue;
        }
        total += 1;
        let state = EstimatorState::from_snapshot(snap, horizon, variant)?;
        if state.ucb(s)? >= target {
            hits += 1;
        }
    }
    Ok((hits, total))
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::default();
        iter.into_iter().for_each(|x| acc.add(x));
        acc
    }
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStat {
    pub mean: f64,
    pub std_err: f64,
    pub count: usize,
}

impl MeanStat {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Arity { min: 1, got: 0 });
        }
        let k = xs.len() as f64;
        let mean = xs.iter().copied().collect::<CompensatedSum>().value() / k;
        let std_err = if xs.len() > 1 {
            let ss = xs
                .iter()
                .map(|x| (x - mean) * (x - mean))
                .collect::<CompensatedSum>()
                .value();
            (ss / (k - 1.0) / k).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            mean,
            std_err,
            count: xs.len(),
        })
    }
}
