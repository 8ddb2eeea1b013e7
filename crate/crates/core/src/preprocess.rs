//! Clustering features: one row per stock, one column per trading day,
//! optionally standardized per day and reduced with PCA or exact t-SNE.
//!
//! These transforms only shape the clustering input. Covariances for the
//! portfolio solve always come from raw returns.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::ReturnMatrix;

/// N × d feature table, rows labelled by ticker.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    row_labels: Vec<String>,
    values: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn new(row_labels: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if row_labels.len() != values.nrows() {
            return Err(Error::invalid(format!(
                "{} labels for {} feature rows",
                row_labels.len(),
                values.nrows()
            )));
        }
        if values.nrows() < 2 {
            return Err(Error::invalid("need at least 2 observations"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Self { row_labels, values })
    }

    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let labels = (0..values.nrows()).map(|i| format!("s{i:03}")).collect();
        Self::new(labels, values)
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }
}

/// Transpose a return window so each stock becomes an observation.
pub fn to_features(returns: &ReturnMatrix) -> Result<FeatureMatrix> {
    FeatureMatrix::new(returns.tickers().to_vec(), returns.values().transpose())
}

/// Per-column standardization with the population standard deviation.
/// Zero-variance columns become zeros.
pub fn standard_scale(x: &FeatureMatrix) -> FeatureMatrix {
    let n = x.n_rows() as f64;
    let mut out = x.values.clone();
    for mut col in out.column_iter_mut() {
        let magnitude = col.amax();
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n).sqrt();
        // constant up to rounding
        if sd > 1e-12 * magnitude {
            col /= sd;
        } else {
            col.fill(0.0);
        }
    }
    FeatureMatrix {
        row_labels: x.row_labels.clone(),
        values: out,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub scores: FeatureMatrix,
    /// `n_components × d`, orthonormal rows.
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Principal components of the mean-centered features.
///
/// Each component's sign is fixed so that its largest-magnitude loading is
/// positive.
pub fn pca_fit(x: &FeatureMatrix, n_components: usize) -> Result<PcaResult> {
    let (n, d) = x.values.shape();
    if n_components == 0 || n_components > n.min(d) {
        return Err(Error::invalid(format!(
            "n_components {n_components} outside 1..={}",
            n.min(d)
        )));
    }
    let mean: Vec<f64> = x.values.column_iter().map(|c| c.sum() / n as f64).collect();
    let mut centered = x.values.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let svd = centered.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::invalid("SVD did not converge"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let mut components = DMatrix::zeros(n_components, d);
    for (row, &idx) in order.iter().take(n_components).enumerate() {
        let mut v = v_t.row(idx).into_owned();
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            v = -v;
        }
        components.set_row(row, &v);
    }
    let denom = (n - 1).max(1) as f64;
    let total: f64 = centered.norm_squared() / denom;
    let explained_variance: Vec<f64> = order
        .iter()
        .take(n_components)
        .map(|&i| svd.singular_values[i].powi(2) / denom)
        .collect();
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    let scores = &centered * components.transpose();
    Ok(PcaResult {
        scores: FeatureMatrix {
            row_labels: x.row_labels.clone(),
            values: scores,
        },
        components,
        explained_variance,
        explained_variance_ratio,
        mean,
    })
}

pub fn pca(x: &FeatureMatrix, n_components: usize) -> Result<FeatureMatrix> {
    pca_fit(x, n_components).map(|r| r.scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneParams {
    pub n_components: usize,
    pub perplexity: f64,
    pub learning_rate: f64,
    pub n_iter: usize,
    pub early_exaggeration: f64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            n_components: 2,
            perplexity: 30.0,
            learning_rate: 200.0,
            n_iter: 1000,
            early_exaggeration: 12.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TsneResult {
    pub embedding: FeatureMatrix,
    /// Entropy (nats) of each conditional distribution after calibration.
    pub row_entropies: Vec<f64>,
    /// `KL(P‖Q)` before the first step and after every iteration.
    pub kl_trace: Vec<f64>,
}

const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 200;

fn squared_distances(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (x.row(i) - x.row(j)).norm_squared();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Row `i` of the conditional affinities with precision `beta`; returns the
/// entropy in nats.
fn conditional_row(dist: &DMatrix<f64>, i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let n = dist.nrows();
    // shift by the nearest neighbour distance for numerical range
    let d_min = (0..n)
        .filter(|&j| j != i)
        .map(|j| dist[(i, j)])
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for j in 0..n {
        out[j] = if j == i {
            0.0
        } else {
            (-(dist[(i, j)] - d_min) * beta).exp()
        };
        sum += out[j];
    }
    let mut weighted = 0.0;
    for j in 0..n {
        out[j] /= sum;
        if j != i {
            weighted += out[j] * (dist[(i, j)] - d_min);
        }
    }
    sum.ln() + beta * weighted
}

/// Binary search per row for the precision whose entropy matches
/// `ln(perplexity)`.
fn calibrate(dist: &DMatrix<f64>, perplexity: f64) -> (DMatrix<f64>, Vec<f64>) {
    let n = dist.nrows();
    let target = perplexity.ln();
    let mut p = DMatrix::zeros(n, n);
    let mut entropies = Vec::with_capacity(n);
    let mut row = vec![0.0; n];
    for i in 0..n {
        let mut beta = 1.0;
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        // scale the initial guess to the data
        let mean_d = (0..n)
            .filter(|&j| j != i)
            .map(|j| dist[(i, j)])
            .sum::<f64>()
            / (n - 1) as f64;
        if mean_d > 0.0 {
            beta = 1.0 / mean_d;
        }
        let mut h = conditional_row(dist, i, beta, &mut row);
        for _ in 0..MAX_BISECTIONS {
            let diff = h - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() {
                    0.5 * (beta + hi)
                } else {
                    beta * 2.0
                };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
            h = conditional_row(dist, i, beta, &mut row);
        }
        entropies.push(h);
        for j in 0..n {
            p[(i, j)] = row[j];
        }
    }
    (p, entropies)
}

fn kl_divergence(p: &DMatrix<f64>, q_num: &DMatrix<f64>, q_sum: f64) -> f64 {
    let n = p.nrows();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && p[(i, j)] > 0.0 {
                let q = (q_num[(i, j)] / q_sum).max(1e-300);
                kl += p[(i, j)] * (p[(i, j)] / q).ln();
            }
        }
    }
    kl
}

fn student_t_kernel(y: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = y.nrows();
    let mut num = DMatrix::zeros(n, n);
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 1.0 / (1.0 + (y.row(i) - y.row(j)).norm_squared());
            num[(i, j)] = v;
            num[(j, i)] = v;
            sum += 2.0 * v;
        }
    }
    (num, sum)
}

/// Exact t-SNE with early exaggeration for the first quarter of the
/// iterations, momentum 0.5 then 0.8, and per-coordinate adaptive gains.
pub fn tsne_fit(x: &FeatureMatrix, params: &TsneParams, seed: u64) -> Result<TsneResult> {
    let n = x.n_rows();
    let dims = params.n_components;
    if n < 4 {
        return Err(Error::invalid(format!(
            "t-SNE needs at least 4 points, got {n}"
        )));
    }
    if dims == 0 {
        return Err(Error::invalid("t-SNE needs at least one output dimension"));
    }
    if !(params.perplexity > 0.0) || params.perplexity >= n as f64 {
        return Err(Error::invalid(format!(
            "perplexity {} must lie in (0, {n})",
            params.perplexity
        )));
    }
    if !(params.learning_rate > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let dist = squared_distances(&x.values);
    for i in 0..n {
        for j in (i + 1)..n {
            if dist[(i, j)] == 0.0 {
                return Err(Error::invalid(format!(
                    "t-SNE input rows {} and {} are identical",
                    x.row_labels[i], x.row_labels[j]
                )));
            }
        }
    }

    let (cond, row_entropies) = calibrate(&dist, params.perplexity);
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[(i, j)] = ((cond[(i, j)] + cond[(j, i)]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }
    let p_sum = p.sum();
    p /= p_sum;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y = DMatrix::from_fn(n, dims, |_, _| init.sample(&mut rng));
    let mut update = DMatrix::<f64>::zeros(n, dims);
    let mut gains = DMatrix::<f64>::from_element(n, dims, 1.0);
    let switch = params.n_iter / 4;

    let (num, q_sum) = student_t_kernel(&y);
    let mut kl_trace = Vec::with_capacity(params.n_iter + 1);
    kl_trace.push(kl_divergence(&p, &num, q_sum));

    let mut grad = DMatrix::<f64>::zeros(n, dims);
    for iter in 0..params.n_iter {
        let (exaggeration, momentum) = if iter < switch {
            (params.early_exaggeration, 0.5)
        } else {
            (1.0, 0.8)
        };
        let (num, q_sum) = student_t_kernel(&y);
        grad.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let coeff = 4.0 * (exaggeration * p[(i, j)] - num[(i, j)] / q_sum) * num[(i, j)];
                for c in 0..dims {
                    grad[(i, c)] += coeff * (y[(i, c)] - y[(j, c)]);
                }
            }
        }
        for i in 0..n {
            for c in 0..dims {
                let g = grad[(i, c)];
                let same_sign = (g > 0.0) == (update[(i, c)] > 0.0);
                gains[(i, c)] = if same_sign {
                    (gains[(i, c)] * 0.8).max(0.01)
                } else {
                    gains[(i, c)] + 0.2
                };
                update[(i, c)] =
                    momentum * update[(i, c)] - params.learning_rate * gains[(i, c)] * g;
                y[(i, c)] += update[(i, c)];
            }
        }
        for mut col in y.column_iter_mut() {
            let mean = col.sum() / n as f64;
            col.add_scalar_mut(-mean);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(iter));
        }
        let (num, q_sum) = student_t_kernel(&y);
        let kl = kl_divergence(&p, &num, q_sum);
        if !kl.is_finite() {
            return Err(Error::NonFinite(iter));
        }
        kl_trace.push(kl);
    }

    Ok(TsneResult {
        embedding: FeatureMatrix {
            row_labels: x.row_labels.clone(),
            values: y,
        },
        row_entropies,
        kl_trace,
    })
}

pub fn tsne(x: &FeatureMatrix, params: &TsneParams, seed: u64) -> Result<FeatureMatrix> {
    tsne_fit(x, params, seed).map(|r| r.embedding)
}
