//! Seeded factor-model return panels for fixtures and experiments.
//!
//! Stock `i` in block `b` earns
//! `drift + beta_i·market_t + block_loading_b·block_{b,t} + idio_b·noise_{i,t}`
//! with independent standard normal factors and noise.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{PriceMatrix, ReturnMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactorModel {
    pub blocks: usize,
    pub per_block: usize,
    pub days: usize,
    pub drift: f64,
    pub market_vol: f64,
    /// Market betas are spread evenly over this range across blocks.
    pub beta_range: (f64, f64),
    /// Block-factor volatility, spread geometrically across blocks.
    pub block_vol_range: (f64, f64),
    /// Idiosyncratic volatility, spread geometrically across blocks.
    pub idio_vol_range: (f64, f64),
}

impl Default for FactorModel {
    fn default() -> Self {
        Self {
            blocks: 4,
            per_block: 10,
            days: 300,
            drift: 0.0,
            market_vol: 0.0,
            beta_range: (1.0, 1.0),
            block_vol_range: (0.01, 0.01),
            idio_vol_range: (0.005, 0.005),
        }
    }
}

fn spread_linear(range: (f64, f64), i: usize, n: usize) -> f64 {
    if n <= 1 {
        range.0
    } else {
        range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64
    }
}

fn spread_geometric(range: (f64, f64), i: usize, n: usize) -> f64 {
    if n <= 1 || range.0 <= 0.0 || range.1 <= 0.0 {
        spread_linear(range, i, n)
    } else {
        range.0 * (range.1 / range.0).powf(i as f64 / (n - 1) as f64)
    }
}

impl FactorModel {
    /// Blocks with unit-free correlation `within_corr` inside a block and
    /// zero across blocks, every stock with daily volatility `vol`.
    pub fn equicorrelated(
        blocks: usize,
        per_block: usize,
        days: usize,
        within_corr: f64,
        vol: f64,
    ) -> Self {
        Self {
            blocks,
            per_block,
            days,
            drift: 0.0,
            market_vol: 0.0,
            beta_range: (0.0, 0.0),
            block_vol_range: (vol * within_corr.sqrt(), vol * within_corr.sqrt()),
            idio_vol_range: (
                vol * (1.0 - within_corr).sqrt(),
                vol * (1.0 - within_corr).sqrt(),
            ),
        }
    }

    /// 12 blocks of 10 under a weak common market factor, block and
    /// idiosyncratic volatility rising together across blocks; nine
    /// quarterly windows after a one-year lookback.
    pub fn size_tradeoff() -> Self {
        Self {
            blocks: 12,
            per_block: 10,
            days: 252 + 63 * 8,
            drift: 0.0003,
            market_vol: 0.005,
            beta_range: (1.0, 1.0),
            block_vol_range: (0.002, 0.006),
            idio_vol_range: (0.008, 0.03),
        }
    }

    pub fn n_assets(&self) -> usize {
        self.blocks * self.per_block
    }

    /// Block of each stock, stocks ordered block by block.
    pub fn block_labels(&self) -> Vec<usize> {
        (0..self.n_assets()).map(|i| i / self.per_block).collect()
    }

    pub fn generate(&self, seed: u64) -> Result<ReturnMatrix> {
        if self.blocks == 0 || self.per_block == 0 || self.days == 0 {
            return Err(Error::invalid("factor model needs blocks, stocks and days"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let n = self.n_assets();
        let market: Vec<f64> = (0..self.days).map(|_| normal()).collect();
        let block_f = DMatrix::from_fn(self.days, self.blocks, |_, _| normal());
        let noise = DMatrix::from_fn(self.days, n, |_, _| normal());
        let values = DMatrix::from_fn(self.days, n, |t, i| {
            let b = i / self.per_block;
            let beta = spread_linear(self.beta_range, b, self.blocks);
            let load = spread_geometric(self.block_vol_range, b, self.blocks);
            let idio = spread_geometric(self.idio_vol_range, b, self.blocks);
            let r = self.drift
                + beta * self.market_vol * market[t]
                + load * block_f[(t, b)]
                + idio * noise[(t, i)];
            r.max(-0.95)
        });
        let dates = (0..self.days).map(|t| synthetic_date(t + 1)).collect();
        let tickers = (0..n)
            .map(|i| format!("B{:02}S{:02}", i / self.per_block, i % self.per_block))
            .collect();
        ReturnMatrix::new(dates, tickers, values)
    }
}

/// Consecutive weekdays from 2000-01-03, formatted as ISO dates.
pub fn synthetic_date(index: usize) -> String {
    // 2000-01-03 is a Monday
    let weeks = index / 5;
    let day_number = weeks * 7 + index % 5;
    let mut days = day_number as i64;
    let (mut year, mut month, mut day) = (2000i64, 1u32, 3i64);
    loop {
        let len = days_in_month(year, month) as i64;
        if day + days <= len {
            day += days;
            break;
        }
        days -= len - day + 1;
        day = 1;
        month += 1;
        if month > 12 {
            month = 1;
            year += 1;
        }
    }
    format!("{year:04}-{month:02}-{day:02}")
}

fn days_in_month(year: i64, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        _ if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 => 29,
        _ => 28,
    }
}

/// Price panel starting at 100 whose returns are `returns`; the first price
/// row is dated one weekday before the first return.
pub fn prices_from_returns(returns: &ReturnMatrix, first_date: String) -> Result<PriceMatrix> {
    let t = returns.n_days();
    let n = returns.n_assets();
    let mut values = DMatrix::from_element(t + 1, n, 100.0);
    for row in 0..t {
        for i in 0..n {
            values[(row + 1, i)] = values[(row, i)] * (1.0 + returns.values()[(row, i)]);
        }
    }
    let mut dates = vec![first_date];
    dates.extend(returns.dates().iter().cloned());
    PriceMatrix::new(dates, returns.tickers().to_vec(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmvp::sample_covariance;

    #[test]
    fn dates_are_increasing_weekdays() {
        assert_eq!(synthetic_date(0), "2000-01-03");
        assert_eq!(synthetic_date(4), "2000-01-07");
        assert_eq!(synthetic_date(5), "2000-01-10");
        assert_eq!(synthetic_date(41), "2000-02-29");
        let dates: Vec<String> = (0..3000).map(synthetic_date).collect();
        assert!(dates.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn block_correlation_is_close_to_target() {
        let m = FactorModel::equicorrelated(2, 3, 4000, 0.9, 0.01);
        let r = m.generate(1).unwrap();
        let s = sample_covariance(&r).unwrap();
        let v = s.values();
        let corr = |i: usize, j: usize| v[(i, j)] / (v[(i, i)] * v[(j, j)]).sqrt();
        assert!((corr(0, 1) - 0.9).abs() < 0.02);
        assert!(corr(0, 4).abs() < 0.05);
        assert!((v[(0, 0)].sqrt() - 0.01).abs() < 0.0005);
    }

    #[test]
    fn deterministic_and_priced() {
        let m = FactorModel::default();
        let a = m.generate(5).unwrap();
        assert_eq!(a, m.generate(5).unwrap());
        let p = prices_from_returns(&a, synthetic_date(0)).unwrap();
        let back = crate::market_data::compute_returns(&p).unwrap();
        assert!((back.values() - a.values()).amax() < 1e-12);
    }
}
