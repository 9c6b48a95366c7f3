//! Bidding policies: truthful reporting and scripted deviations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BidPolicy {
    #[default]
    Truthful,
    /// Bid `factor · value` every round.
    ScaledBid { factor: f64 },
    /// Bid `bid` in rounds `from..=to`, truthfully elsewhere.
    FixedDeviation { from: usize, to: usize, bid: f64 },
    /// Bid zero before round `switch`, truthfully from `switch` on.
    ZeroThenTruthful { switch: usize },
}

impl BidPolicy {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        match *self {
            BidPolicy::Truthful => Ok(()),
            BidPolicy::ScaledBid { factor } if factor > 0.0 && factor.is_finite() => Ok(()),
            BidPolicy::ScaledBid { factor } => {
                Err(Error::InvalidPolicy(format!("scale factor {factor} must be > 0")))
            }
            BidPolicy::FixedDeviation { from, to, bid } => {
                if !(bid >= 0.0 && bid.is_finite()) {
                    Err(Error::InvalidPolicy(format!("deviation bid {bid} must be >= 0")))
                } else if from == 0 || from > to || to > horizon {
                    Err(Error::InvalidPolicy(format!(
                        "deviation rounds {from}..={to} not within 1..={horizon}"
                    )))
                } else {
                    Ok(())
                }
            }
            BidPolicy::ZeroThenTruthful { switch } if switch >= 1 && switch <= horizon + 1 => Ok(()),
            BidPolicy::ZeroThenTruthful { switch } => Err(Error::InvalidPolicy(format!(
                "switch round {switch} not within 1..={}",
                horizon + 1
            ))),
        }
    }

    pub fn bid(&self, value: f64, t: usize) -> f64 {
        match *self {
            BidPolicy::Truthful => value,
            BidPolicy::ScaledBid { factor } => factor * value,
            BidPolicy::FixedDeviation { from, to, bid } if (from..=to).contains(&t) => bid,
            BidPolicy::FixedDeviation { .. } => value,
            BidPolicy::ZeroThenTruthful { switch } if t < switch => 0.0,
            BidPolicy::ZeroThenTruthful { .. } => value,
        }
    }

    pub fn is_truthful(&self) -> bool {
        matches!(self, BidPolicy::Truthful)
    }
}

/// One policy per ad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidProfile {
    policies: Vec<BidPolicy>,
    /// Clamp deviating bids to the ad's value ("no overbidding").
    #[serde(default)]
    cap_at_value: bool,
}

impl BidProfile {
    pub fn truthful(n: usize) -> Self {
        Self {
            policies: vec![BidPolicy::Truthful; n],
            cap_at_value: false,
        }
    }

    pub fn new(policies: Vec<BidPolicy>, horizon: usize, cap_at_value: bool) -> Result<Self> {
        for p in &policies {
            p.validate(horizon)?;
        }
        Ok(Self {
            policies,
            cap_at_value,
        })
    }

    /// Truthful everywhere except `ad`, which follows `policy`.
    pub fn single_deviation(n: usize, ad: usize, policy: BidPolicy, horizon: usize) -> Result<Self> {
        crate::error::check_index("ad", ad, n)?;
        let mut policies = vec![BidPolicy::Truthful; n];
        policies[ad] = policy;
        Self::new(policies, horizon, false)
    }

    pub fn with_cap_at_value(mut self, cap: bool) -> Self {
        self.cap_at_value = cap;
        self
    }

    pub fn policies(&self) -> &[BidPolicy] {
        &self.policies
    }

    pub fn n(&self) -> usize {
        self.policies.len()
    }

    pub fn is_truthful(&self) -> bool {
        self.policies.iter().all(BidPolicy::is_truthful)
    }

    pub fn bids_at(&self, values: &[f64], t: usize) -> Result<Vec<f64>> {
        let mut bids = bids_at(&self.policies, values, t)?;
        if self.cap_at_value {
            bids.iter_mut().zip(values).for_each(|(b, &v)| *b = b.min(v));
        }
        Ok(bids)
    }
}

pub fn bids_at(policies: &[BidPolicy], values: &[f64], t: usize) -> Result<Vec<f64>> {
    if policies.len() != values.len() {
        return Err(Error::Inconsistent(format!(
            "{} policies for {} ads",
            policies.len(),
            values.len()
        )));
    }
    Ok(policies
        .iter()
        .zip(values)
        .map(|(p, &v)| p.bid(v, t))
        .collect())
}
