//! Risk and risk-adjusted return measures on daily series.
//!
//! Everything annualizes with `√252`. Benchmark and target rates are daily.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::TRADING_DAYS_PER_YEAR;

fn annualizer() -> f64 {
    (TRADING_DAYS_PER_YEAR as f64).sqrt()
}

fn need(daily: &[f64], n: usize) -> Result<()> {
    if daily.len() < n {
        return Err(Error::invalid(format!(
            "series of length {} is too short (need {n})",
            daily.len()
        )));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_std(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Root mean square of the shortfall below `target`, over all observations.
fn semideviation(x: &[f64], target: f64) -> f64 {
    (x.iter().map(|v| (v - target).min(0.0).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn annualized_std(daily: &[f64]) -> Result<f64> {
    need(daily, 2)?;
    Ok(sample_std(daily) * annualizer())
}

pub fn downside_std(daily: &[f64], target: f64) -> Result<f64> {
    need(daily, 2)?;
    Ok(semideviation(daily, target) * annualizer())
}

pub fn sharpe(daily: &[f64], benchmark_daily: f64) -> Result<f64> {
    need(daily, 2)?;
    let sd = sample_std(daily);
    if !(sd > 0.0) {
        return Err(Error::invalid(
            "Sharpe ratio undefined for a zero-volatility series",
        ));
    }
    Ok((mean(daily) - benchmark_daily) / sd * annualizer())
}

pub fn sortino(daily: &[f64], target_daily: f64) -> Result<f64> {
    need(daily, 2)?;
    let dd = semideviation(daily, target_daily);
    if !(dd > 0.0) {
        return Err(Error::invalid(
            "Sortino ratio undefined without returns below target",
        ));
    }
    Ok((mean(daily) - target_daily) / dd * annualizer())
}

/// Worst peak-to-trough decline, as a non-positive fraction.
pub fn max_drawdown(wealth: &[f64]) -> Result<f64> {
    need(wealth, 1)?;
    if let Some(v) = wealth.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::invalid(format!(
            "wealth must stay positive, found {v}"
        )));
    }
    let mut peak = wealth[0];
    let mut worst = 0.0f64;
    for &w in wealth {
        peak = peak.max(w);
        worst = worst.min(w / peak - 1.0);
    }
    Ok(worst)
}

/// Number of tail observations averaged by [`cvar`].
pub fn cvar_tail_len(n: usize, level: f64) -> usize {
    // guard against 20 * 0.05 landing a hair above 1
    let raw = n as f64 * (1.0 - level);
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Mean of the `⌈n(1 - level)⌉` smallest returns.
pub fn cvar(daily: &[f64], level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("CVaR level {level} outside (0, 1)")));
    }
    let tail = cvar_tail_len(daily.len(), level);
    if tail == 0 || tail > daily.len() {
        return Err(Error::invalid(format!(
            "series of length {} too short for CVaR at {level}",
            daily.len()
        )));
    }
    let mut sorted = daily.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(mean(&sorted[..tail]))
}

/// Cumulative wealth from 1.0.
pub fn wealth_curve(daily: &[f64]) -> Vec<f64> {
    daily
        .iter()
        .scan(1.0, |w, r| {
            *w *= 1.0 + r;
            Some(*w)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ann_std: f64,
    pub ann_downside_std: f64,
    pub sharpe: f64,
    pub sortino: f64,
    pub max_drawdown: f64,
    pub cvar_95: f64,
}

impl MetricsReport {
    /// All six measures for a daily series; `rate` is both the Sharpe
    /// benchmark and the Sortino target.
    pub fn compute(daily: &[f64], rate: f64) -> Result<Self> {
        let wealth = wealth_curve(daily);
        Ok(Self {
            ann_std: annualized_std(daily)?,
            ann_downside_std: downside_std(daily, rate)?,
            sharpe: sharpe(daily, rate)?,
            sortino: sortino(daily, rate)?,
            max_drawdown: max_drawdown(&wealth)?,
            cvar_95: cvar(daily, 0.95)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_cases() {
        assert!(annualized_std(&[0.01; 10]).unwrap() < 1e-15);
        let alt: Vec<f64> = (0..252)
            .map(|i| if i % 2 == 0 { 0.01 } else { -0.01 })
            .collect();
        let expected = 0.01 * (252.0f64 * 252.0 / 251.0).sqrt();
        assert!((annualized_std(&alt).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 0.1590).abs() < 1e-4);
        let scaled: Vec<f64> = alt.iter().map(|v| -3.0 * v).collect();
        assert!((annualized_std(&scaled).unwrap() - 3.0 * expected).abs() < 1e-13);
        assert!(annualized_std(&[0.1]).is_err());
    }

    #[test]
    fn downside_cases() {
        assert_eq!(downside_std(&[0.01, 0.02, 0.0], 0.0).unwrap(), 0.0);
        let v = downside_std(&[-0.01, 0.01], 0.0).unwrap();
        assert!((v - (0.0001f64 / 2.0).sqrt() * 252f64.sqrt()).abs() < 1e-15);
        let shifted = downside_std(&[0.04, 0.06], 0.05).unwrap();
        assert!((shifted - v).abs() < 1e-14);
    }

    #[test]
    fn sharpe_cases() {
        let r = [0.01, 0.03, -0.01, 0.02];
        let m = r.iter().sum::<f64>() / 4.0;
        assert!(sharpe(&r, m).unwrap().abs() < 1e-15);
        let b = 0.001;
        let stretched: Vec<f64> = r.iter().map(|v| b + 2.0 * (v - b)).collect();
        assert!((sharpe(&r, b).unwrap() - sharpe(&stretched, b).unwrap()).abs() < 1e-12);
        assert!(sharpe(&[0.01, 0.01], 0.0).is_err());
    }

    #[test]
    fn sortino_on_symmetric_series() {
        // symmetric about its mean: the semideviation is the population std over √2
        let base = [0.013, -0.004, 0.021, 0.007, -0.017, 0.002];
        let m = 0.0005;
        let series: Vec<f64> = base.iter().flat_map(|d| [m + d, m - d]).collect();
        let n = series.len() as f64;
        let sd = annualized_std(&series).unwrap();
        let dd = downside_std(&series, m).unwrap();
        assert!((dd - sd * ((n - 1.0) / n).sqrt() / 2f64.sqrt()).abs() < 1e-14);
        // with the target at the centre both ratios vanish
        assert!(sortino(&series, m).unwrap().abs() < 1e-12);
        assert!(sharpe(&series, m).unwrap().abs() < 1e-12);
        assert!(sortino(&[0.01, 0.02], 0.0).is_err());
    }

    #[test]
    fn drawdown_cases() {
        assert_eq!(max_drawdown(&[1.0, 1.1, 1.2]).unwrap(), 0.0);
        assert!((max_drawdown(&[1.0, 1.2, 0.9, 1.1]).unwrap() + 0.25).abs() < 1e-15);
        assert!(max_drawdown(&[1.0, 0.0]).is_err());
        let a = max_drawdown(&[1.0, 1.2, 0.9, 1.1]).unwrap();
        let b = max_drawdown(&[3.0, 3.6, 2.7, 3.3]).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn cvar_cases() {
        let r: Vec<f64> = (0..20).map(|i| (i as f64 - 7.0) * 0.001).collect();
        assert_eq!(cvar_tail_len(20, 0.95), 1);
        assert_eq!(cvar(&r, 0.95).unwrap(), -0.007);
        assert_eq!(cvar(&[0.004; 30], 0.95).unwrap(), 0.004);
        assert_eq!(cvar_tail_len(21, 0.95), 2);
        assert!(cvar(&[], 0.95).is_err());
    }

    #[test]
    fn report_bundle() {
        let r = [0.01, -0.02, 0.015, 0.003, -0.004, 0.02, -0.01];
        let m = MetricsReport::compute(&r, 0.0).unwrap();
        assert!(m.max_drawdown <= 0.0);
        assert!(m.ann_std >= 0.0);
        assert_eq!(m.cvar_95, -0.02);
    }
}
