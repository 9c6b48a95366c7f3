//! Counter-based click randomness.
//!
//! Every run owns one ChaCha8 stream per ad, keyed by `(master_seed, run)`
//! and selected by ad index. The `k`-th impression of ad `i` always consumes
//! the `k`-th draw of stream `i`, whatever order the ads are shown in. Two
//! runs with the same key therefore see the same click tape per ad, which is
//! what the coupled deviation and lower-bound experiments rely on, and a
//! parallel sweep is reproducible regardless of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_index, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into a seed. Order-sensitive.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

#[derive(Debug, Clone)]
pub struct ClickStream {
    tapes: Vec<ChaCha8Rng>,
    draws: Vec<u64>,
}

impl ClickStream {
    pub fn new(master_seed: u64, run: u64, n: usize) -> Self {
        let base = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, &[run]));
        let tapes = (0..n)
            .map(|ad| {
                let mut tape = base.clone();
                tape.set_stream(ad as u64);
                tape
            })
            .collect();
        Self {
            tapes,
            draws: vec![0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.tapes.len()
    }

    /// Number of draws already taken from ad `ad`'s tape.
    pub fn position(&self, ad: usize) -> u64 {
        self.draws[ad]
    }

    /// Next uniform in `[0, 1)` from ad `ad`'s tape.
    pub fn next_uniform(&mut self, ad: usize) -> Result<f64> {
        check_index("ad", ad, self.tapes.len())?;
        self.draws[ad] += 1;
        Ok(self.tapes[ad].gen::<f64>())
    }

    /// Bernoulli(`ctr`) draw for ad `ad`. `ctr` is not range-checked here so
    /// degenerate probabilities 0 and 1 can be exercised directly.
    pub fn draw(&mut self, ad: usize, ctr: f64) -> Result<bool> {
        Ok(self.next_uniform(ad)? < ctr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_probabilities() {
        let mut s = ClickStream::new(7, 0, 2);
        assert!((0..1000).all(|_| s.draw(0, 1.0).unwrap()));
        assert!((0..1000).all(|_| !s.draw(1, 0.0).unwrap()));
    }

    #[test]
    fn fair_coin_mean() {
        let mut s = ClickStream::new(11, 3, 1);
        let draws = 100_000;
        let hits = (0..draws).filter(|_| s.draw(0, 0.5).unwrap()).count();
        let mean = hits as f64 / draws as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn tapes_are_independent_of_interleaving() {
        let mut a = ClickStream::new(42, 9, 3);
        let mut b = ClickStream::new(42, 9, 3);
        let seq_a: Vec<f64> = (0..5).map(|_| a.next_uniform(2).unwrap()).collect();
        // Interleave other ads before reading ad 2 on the second stream.
        let mut seq_b = Vec::new();
        for _ in 0..5 {
            b.next_uniform(0).unwrap();
            b.next_uniform(1).unwrap();
            seq_b.push(b.next_uniform(2).unwrap());
        }
        assert_eq!(seq_a, seq_b);
        assert_eq!(b.position(2), 5);
    }

    #[test]
    fn distinct_runs_and_ads_differ() {
        let mut a = ClickStream::new(1, 0, 2);
        let mut b = ClickStream::new(1, 1, 2);
        let xa: Vec<f64> = (0..4).map(|_| a.next_uniform(0).unwrap()).collect();
        let xb: Vec<f64> = (0..4).map(|_| b.next_uniform(0).unwrap()).collect();
        let xc: Vec<f64> = (0..4).map(|_| a.next_uniform(1).unwrap()).collect();
        assert_ne!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn bad_ad_index() {
        let mut s = ClickStream::new(0, 0, 2);
        assert!(s.draw(2, 0.5).is_err());
    }
}
