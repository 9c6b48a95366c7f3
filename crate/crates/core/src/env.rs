//! The simulated world: true CTRs, valuation schedule and horizon.

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::rng::ClickStream;
use crate::stats::{argmax, smax, top_two};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuationSchedule {
    /// The same values every round.
    Fixed(Vec<f64>),
    /// One row of values per round of the horizon.
    Adversarial(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionEnv {
    ctrs: Vec<f64>,
    schedule: ValuationSchedule,
    horizon: usize,
    master_seed: u64,
}

/// eCPM gaps of a fixed-value environment.
#[derive(Debug, Clone, PartialEq)]
pub struct GapProfile {
    pub ecpm: Vec<f64>,
    pub best_index: usize,
    pub runner_up_index: usize,
    /// Highest minus second-highest eCPM.
    pub zeta: f64,
    /// `(ρ_best v_best − ρ_i v_i) / v_i`; zero at `best_index`.
    pub deltas: Vec<f64>,
}

fn check_values(row: &[f64], n: usize, what: &str) -> Result<()> {
    if row.len() != n {
        return Err(Error::InvalidEnv(format!(
            "{what} has {} entries, expected {n}",
            row.len()
        )));
    }
    if let Some((i, v)) = row.iter().enumerate().find(|(_, &v)| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidEnv(format!("{what}[{i}] = {v} is not a positive value")));
    }
    Ok(())
}

impl AuctionEnv {
    /// A horizon of zero is accepted and describes a run with only the
    /// free warm-start impressions.
    pub fn new(
        ctrs: Vec<f64>,
        schedule: ValuationSchedule,
        horizon: usize,
        master_seed: u64,
    ) -> Result<Self> {
        let n = ctrs.len();
        if n < 2 {
            return Err(Error::InvalidEnv(format!("need at least 2 ads, got {n}")));
        }
        if let Some((i, c)) = ctrs.iter().enumerate().find(|(_, &c)| !(c > 0.0 && c < 1.0)) {
            return Err(Error::InvalidEnv(format!("ctrs[{i}] = {c} not in (0, 1)")));
        }
        match &schedule {
            ValuationSchedule::Fixed(v) => check_values(v, n, "values")?,
            ValuationSchedule::Adversarial(table) => {
                if table.len() != horizon {
                    return Err(Error::InvalidEnv(format!(
                        "valuation table has {} rows, horizon is {horizon}",
                        table.len()
                    )));
                }
                for (t, row) in table.iter().enumerate() {
                    check_values(row, n, &format!("table[{t}]"))?;
                }
            }
        }
        Ok(Self {
            ctrs,
            schedule,
            horizon,
            master_seed,
        })
    }

    pub fn fixed(ctrs: Vec<f64>, values: Vec<f64>, horizon: usize, master_seed: u64) -> Result<Self> {
        Self::new(ctrs, ValuationSchedule::Fixed(values), horizon, master_seed)
    }

    /// Same world with a different horizon. Adversarial tables are truncated
    /// and must already hold at least `horizon` rows.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let schedule = match &self.schedule {
            ValuationSchedule::Fixed(v) => ValuationSchedule::Fixed(v.clone()),
            ValuationSchedule::Adversarial(table) => {
                if table.len() < horizon {
                    return Err(Error::InvalidEnv(format!(
                        "valuation table has {} rows, horizon {horizon} requested",
                        table.len()
                    )));
                }
                ValuationSchedule::Adversarial(table[..horizon].to_vec())
            }
        };
        Self::new(self.ctrs.clone(), schedule, horizon, self.master_seed)
    }

    pub fn with_master_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }

    pub fn n(&self) -> usize {
        self.ctrs.len()
    }

    pub fn ctrs(&self) -> &[f64] {
        &self.ctrs
    }

    pub fn schedule(&self) -> &ValuationSchedule {
        &self.schedule
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self.schedule, ValuationSchedule::Fixed(_))
    }

    /// Values of round `t`, `1 <= t <= horizon`.
    pub fn value_at(&self, t: usize) -> Result<&[f64]> {
        if t == 0 || t > self.horizon {
            return Err(Error::RoundOutOfRange {
                round: t,
                horizon: self.horizon,
            });
        }
        Ok(match &self.schedule {
            ValuationSchedule::Fixed(v) => v,
            ValuationSchedule::Adversarial(table) => &table[t - 1],
        })
    }

    /// Values that do not depend on the round. Errors for adversarial schedules.
    pub fn fixed_values(&self) -> Result<&[f64]> {
        match &self.schedule {
            ValuationSchedule::Fixed(v) => Ok(v),
            ValuationSchedule::Adversarial(_) => Err(Error::UnsupportedMode),
        }
    }

    pub fn ecpm_at(&self, t: usize) -> Result<Vec<f64>> {
        Ok(self
            .value_at(t)?
            .iter()
            .zip(&self.ctrs)
            .map(|(v, c)| v * c)
            .collect())
    }

    /// Second-highest true eCPM of round `t`: the oracle's expected revenue.
    pub fn opt_at(&self, t: usize) -> Result<f64> {
        smax(&self.ecpm_at(t)?)
    }

    pub fn sample_click(&self, ad: usize, stream: &mut ClickStream) -> Result<bool> {
        check_index("ad", ad, self.n())?;
        stream.draw(ad, self.ctrs[ad])
    }

    pub fn gap_profile(&self) -> Result<GapProfile> {
        let values = self.fixed_values()?;
        let ecpm: Vec<f64> = values.iter().zip(&self.ctrs).map(|(v, c)| v * c).collect();
        let (best, runner_up) = top_two(&ecpm)?;
        let deltas = values
            .iter()
            .zip(&ecpm)
            .map(|(v, e)| (ecpm[best] - e) / v)
            .collect();
        Ok(GapProfile {
            zeta: ecpm[best] - ecpm[runner_up],
            best_index: best,
            runner_up_index: runner_up,
            deltas,
            ecpm,
        })
    }

    /// Largest per-round second-highest eCPM over the horizon, the scale `M`
    /// of the worst-case regret ceiling.
    pub fn max_opt_round(&self) -> Result<f64> {
        match &self.schedule {
            ValuationSchedule::Fixed(v) => {
                smax(&v.iter().zip(&self.ctrs).map(|(v, c)| v * c).collect::<Vec<_>>())
            }
            ValuationSchedule::Adversarial(_) => {
                let per_round = (1..=self.horizon)
                    .map(|t| self.opt_at(t))
                    .collect::<Result<Vec<_>>>()?;
                Ok(per_round.into_iter().fold(0.0, f64::max))
            }
        }
    }

    /// Index of the highest true eCPM in round `t`.
    pub fn best_at(&self, t: usize) -> Result<usize> {
        argmax(&self.ecpm_at(t)?)
    }
}
