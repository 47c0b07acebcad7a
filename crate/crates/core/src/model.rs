//! Discretized exponential Ornstein-Uhlenbeck spot prices.
//!
//! Every path owns a ChaCha stream selected by its index, so a path's values
//! depend only on `(seed, path index, date)` and never on how the work is
//! split across threads. Conditional (inner) path sets draw from a seed derived
//! by the caller, one stream per inner path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of `log S_j = (1 - k)(log S_{j-1} - mu) + mu + sigma * eps_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    pub sigma: f64,
    pub meanrev: f64,
    pub mu: f64,
    pub s0: f64,
    pub horizon: usize,
}

impl MarketModel {
    pub fn new(sigma: f64, meanrev: f64, mu: f64, s0: f64, horizon: usize) -> Result<Self> {
        let model = MarketModel {
            sigma,
            meanrev,
            mu,
            s0,
            horizon,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma", "must be finite and >= 0"));
        }
        if !self.meanrev.is_finite() {
            return Err(Error::invalid("meanrev", "must be finite"));
        }
        if !self.mu.is_finite() {
            return Err(Error::invalid("mu", "must be finite"));
        }
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(Error::invalid("s0", "must be finite and > 0"));
        }
        if self.horizon < 1 {
            return Err(Error::invalid("horizon", "must be >= 1"));
        }
        Ok(())
    }

    /// The cemetery date `T + 1`.
    pub fn cemetery(&self) -> usize {
        self.horizon + 1
    }

    /// Conditional mean of `log S_{j+1}` given `S_j = price`.
    pub fn next_log_mean(&self, price: f64) -> f64 {
        (1.0 - self.meanrev) * (price.ln() - self.mu) + self.mu
    }

    /// Simulates `count` paths over dates `0..=T+1` from `S_0 = s0`.
    pub fn simulate_paths(&self, count: usize, seed: u64) -> PathSet {
        self.simulate_range(0, count, seed)
    }

    /// Paths with indices `first..first + count` of the set keyed by `seed`.
    ///
    /// Identical to the corresponding rows of `simulate_paths(first + count, seed)`.
    pub fn simulate_range(&self, first: usize, count: usize, seed: u64) -> PathSet {
        self.simulate_from(0, self.s0, first, count, seed)
    }

    /// Simulates `count` paths over `start_date..=T+1` conditionally on
    /// `S_{start_date} = start_price`.
    ///
    /// # Panics
    ///
    /// Panics if `start_date > T` or `start_price` is not positive.
    pub fn simulate_inner_paths(
        &self,
        start_date: usize,
        start_price: f64,
        count: usize,
        seed: u64,
    ) -> PathSet {
        self.simulate_from(start_date, start_price, 0, count, seed)
    }

    fn simulate_from(
        &self,
        start_date: usize,
        start_price: f64,
        first: usize,
        count: usize,
        seed: u64,
    ) -> PathSet {
        assert!(start_date <= self.horizon, "start date beyond the horizon");
        assert!(start_price > 0.0, "start price must be positive");
        let width = self.cemetery() - start_date + 1;
        let mut prices = vec![0.0; count * width];
        let fill = |(offset, row): (usize, &mut [f64])| {
            let mut rng = path_rng(seed, (first + offset) as u64);
            self.fill_path(row, start_price, &mut rng);
        };
        if count * width >= PARALLEL_THRESHOLD {
            prices.par_chunks_mut(width).enumerate().for_each(fill);
        } else {
            prices.chunks_mut(width).enumerate().for_each(fill);
        }
        PathSet {
            first_date: start_date,
            width,
            prices,
            seed,
        }
    }

    /// Writes one path into `row`; the last slot is the cemetery date.
    pub(crate) fn fill_path(&self, row: &mut [f64], start_price: f64, rng: &mut ChaCha8Rng) {
        let last = row.len() - 1;
        row[0] = start_price;
        let mut log_s = start_price.ln();
        let keep = 1.0 - self.meanrev;
        for slot in row.iter_mut().take(last).skip(1) {
            let eps: f64 = StandardNormal.sample(rng);
            log_s = keep * (log_s - self.mu) + self.mu + self.sigma * eps;
            *slot = log_s.exp();
        }
        row[last] = 0.0;
    }
}

const PARALLEL_THRESHOLD: usize = 1 << 14;

/// RNG for one path: a ChaCha8 stream selected by `stream` under `seed`.
pub(crate) fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent seed from a base seed and a key.
pub fn derive_seed(base: u64, key: &[u64]) -> u64 {
    let mut h = splitmix(base ^ 0x6a09_e667_f3bc_c908);
    for &k in key {
        h = splitmix(h ^ splitmix(k.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A block of price paths over dates `first_date..=T+1`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    first_date: usize,
    width: usize,
    prices: Vec<f64>,
    seed: u64,
}

impl PathSet {
    /// Builds a path set from explicit rows (each row covers `first_date..=T+1`).
    pub fn from_rows(first_date: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if width < 2 {
            return Err(Error::invalid("rows", "a path needs at least two dates"));
        }
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("rows", "rows have different lengths"));
        }
        Ok(PathSet {
            first_date,
            width,
            prices: rows.concat(),
            seed: 0,
        })
    }

    pub fn count(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.prices.len() / self.width
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn first_date(&self) -> usize {
        self.first_date
    }

    /// The cemetery date of the underlying model.
    pub fn cemetery(&self) -> usize {
        self.first_date + self.width - 1
    }

    pub fn horizon(&self) -> usize {
        self.cemetery() - 1
    }

    pub fn path(&self, m: usize) -> PricePath<'_> {
        let row = &self.prices[m * self.width..(m + 1) * self.width];
        PricePath {
            first_date: self.first_date,
            prices: row,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = PricePath<'_>> + '_ {
        (0..self.count()).map(move |m| self.path(m))
    }

    /// Price of path `m` at `date`.
    pub fn price(&self, m: usize, date: usize) -> f64 {
        self.path(m).price(date)
    }
}

/// One price trajectory, addressed by absolute date.
#[derive(Debug, Clone, Copy)]
pub struct PricePath<'a> {
    first_date: usize,
    prices: &'a [f64],
}

impl<'a> PricePath<'a> {
    pub fn new(first_date: usize, prices: &'a [f64]) -> Self {
        PricePath { first_date, prices }
    }

    pub fn first_date(&self) -> usize {
        self.first_date
    }

    pub fn cemetery(&self) -> usize {
        self.first_date + self.prices.len() - 1
    }

    pub fn price(&self, date: usize) -> f64 {
        self.prices[date - self.first_date]
    }

    pub fn prices(&self) -> &'a [f64] {
        self.prices
    }
}
