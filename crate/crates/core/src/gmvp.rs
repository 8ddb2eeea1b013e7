//! Sample covariance and closed-form global minimum variance weights.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::ReturnMatrix;

/// Largest accepted condition estimate before the ridge fallback kicks in.
pub const MAX_CONDITION: f64 = 1e12;
/// Ridge fallback schedule as multiples of `trace(Σ)/N`.
pub const RIDGE_SCHEDULE: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];
const MIN_NORMALIZER: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    tickers: Vec<String>,
    values: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn new(tickers: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let n = tickers.len();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::invalid(format!(
                "covariance must be {n}x{n}, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        for i in 0..n {
            if !(values[(i, i)] >= 0.0) {
                return Err(Error::invalid(format!("negative variance at {i}")));
            }
            for j in 0..i {
                let (a, b) = (values[(i, j)], values[(j, i)]);
                if !a.is_finite() || (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::invalid(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { tickers, values })
    }

    /// Unlabelled matrix, tickers `s000..`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let tickers = (0..values.nrows()).map(|i| format!("s{i:03}")).collect();
        Self::new(tickers, values)
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.tickers.len()
    }

    /// `wᵀΣw`.
    pub fn quadratic_form(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        (w.transpose() * &self.values * &w)[(0, 0)]
    }
}

/// Portfolio weights over labelled assets; short positions allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl WeightVector {
    pub fn new(labels: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if labels.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} labels for {} weights",
                labels.len(),
                values.len()
            )));
        }
        let sum: f64 = values.iter().sum();
        if values.is_empty() || (sum - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self { labels, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Unbiased (divisor `T-1`) sample covariance of the return columns.
pub fn sample_covariance(r: &ReturnMatrix) -> Result<CovarianceMatrix> {
    let t = r.n_days();
    if t < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 observations for a covariance, got {t}"
        )));
    }
    let x = r.values();
    let means = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let mut cov = centered.transpose() * &centered / (t - 1) as f64;
    // exact symmetry
    let n = cov.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    CovarianceMatrix::new(r.tickers().to_vec(), cov)
}

/// Solution of the regularized system together with the ridge that was
/// actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct GmvpSolution {
    pub weights: WeightVector,
    pub ridge: f64,
}

fn try_solve(sigma: &DMatrix<f64>, ridge: f64) -> Option<DVector<f64>> {
    let n = sigma.nrows();
    let mut a = sigma.clone();
    for i in 0..n {
        a[(i, i)] += ridge;
    }
    let chol = a.cholesky()?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
        (lo.min(d.abs()), hi.max(d.abs()))
    });
    if !(lo > 0.0) || (hi / lo).powi(2) > MAX_CONDITION {
        return None;
    }
    let w = chol.solve(&DVector::from_element(n, 1.0));
    let norm = w.sum();
    if !norm.is_finite() || norm.abs() < MIN_NORMALIZER || w.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(w / norm)
}

/// GMVP weights `(Σ + ridge·I)⁻¹1` normalized to sum to one, escalating the
/// ridge along [`RIDGE_SCHEDULE`] when the system is singular or badly
/// conditioned.
pub fn gmvp_solve(sigma: &CovarianceMatrix, ridge: f64) -> Result<GmvpSolution> {
    let n = sigma.dim();
    if n == 0 {
        return Err(Error::invalid("empty covariance"));
    }
    if !(ridge >= 0.0) {
        return Err(Error::invalid(format!(
            "ridge must be non-negative, got {ridge}"
        )));
    }
    let labels = sigma.tickers().to_vec();
    if n == 1 {
        return Ok(GmvpSolution {
            weights: WeightVector::new(labels, vec![1.0])?,
            ridge,
        });
    }
    let values = sigma.values();
    if let Some(w) = try_solve(values, ridge) {
        return Ok(GmvpSolution {
            weights: WeightVector::new(labels, w.iter().copied().collect())?,
            ridge,
        });
    }
    let scale = values.trace() / n as f64;
    if scale > 0.0 {
        for factor in RIDGE_SCHEDULE {
            let fallback = ridge + factor * scale;
            if let Some(w) = try_solve(values, fallback) {
                log::warn!("covariance ill-conditioned (N={n}); solved with ridge {fallback:.3e}");
                return Ok(GmvpSolution {
                    weights: WeightVector::new(labels, w.iter().copied().collect())?,
                    ridge: fallback,
                });
            }
        }
    }
    Err(Error::SingularCovariance(format!(
        "{n}x{n} system unsolvable up to ridge {:.1e}·trace/N",
        RIDGE_SCHEDULE[RIDGE_SCHEDULE.len() - 1]
    )))
}

pub fn gmvp_weights(sigma: &CovarianceMatrix, ridge: f64) -> Result<WeightVector> {
    gmvp_solve(sigma, ridge).map(|s| s.weights)
}

/// Daily returns of a fixed-weight portfolio.
pub fn portfolio_returns(r: &ReturnMatrix, w: &WeightVector) -> Result<Vec<f64>> {
    if r.tickers() != w.labels.as_slice() {
        return Err(Error::invalid(
            "weight labels do not match return columns".to_string(),
        ));
    }
    let w = DVector::from_column_slice(&w.values);
    Ok((r.values() * w).iter().copied().collect())
}
