//! Online pay-per-click auctions with unknown click-through rates.
//!
//! The crate simulates a seller that repeatedly auctions one ad slot among
//! `n` advertisers whose click-through rates (CTRs) are unknown and must be
//! learned from clicks. Three mechanisms are provided:
//!
//! * [`mechanisms::Mechanism::Oracle`]: the pay-per-click second-price
//!   auction run with the true CTRs. Its revenue is the regret benchmark.
//! * [`mechanisms::Mechanism::Ucb`]: a second-price auction scored with
//!   upper-confidence-bound CTR estimates, updated after every impression.
//!   Truthful bidding is a per-round dominant strategy.
//! * [`mechanisms::Mechanism::Etc`]: explore-then-commit. Free round-robin
//!   exploration until one ad is a clear winner, then second-price rounds on
//!   frozen scores. Truthful bidding is dominant over the whole horizon.
//!
//! Around them sit the experiment pieces: regret accounting and the
//! `Ω(√T)` instance pair ([`lowerbound`]), incentive certificates
//! ([`ic_verify`]), and a seed-parallel sweep harness ([`harness`]).
//!
//! Ads are indexed from 0. Rounds of the horizon are indexed from 1.

pub mod bidders;
pub mod env;
pub mod error;
pub mod harness;
pub mod ic_verify;
pub mod lowerbound;
pub mod mechanisms;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
