//! Two-level GMVP: optimize inside each cluster, treat every cluster
//! portfolio as a tradable asset, optimize across clusters, then multiply
//! the two weight layers back out to stocks.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::gmvp::{gmvp_weights, portfolio_returns, sample_covariance, WeightVector};
use crate::market_data::ReturnMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageResult {
    pub within_weights: Vec<WeightVector>,
    pub between_weights: WeightVector,
    pub flat_weights: WeightVector,
    pub cluster_returns: ReturnMatrix,
}

fn cluster_label(c: usize) -> String {
    format!("cluster_{c}")
}

pub fn within_cluster_weights(
    r: &ReturnMatrix,
    a: &ClusterAssignment,
    ridge: f64,
) -> Result<Vec<WeightVector>> {
    if a.n_points() != r.n_assets() {
        return Err(Error::invalid(format!(
            "assignment covers {} stocks, returns have {}",
            a.n_points(),
            r.n_assets()
        )));
    }
    if let Some(c) = a.sizes().iter().position(|&s| s == 0) {
        return Err(Error::EmptyCluster(c));
    }
    a.members()
        .par_iter()
        .enumerate()
        .map(|(c, members)| {
            let sub = r.select_columns(members)?;
            if members.len() == 1 {
                return WeightVector::new(sub.tickers().to_vec(), vec![1.0]);
            }
            sample_covariance(&sub)
                .and_then(|s| gmvp_weights(&s, ridge))
                .map_err(|e| e.in_cluster(c))
        })
        .collect()
}

pub fn cluster_return_series(
    r: &ReturnMatrix,
    a: &ClusterAssignment,
    within: &[WeightVector],
) -> Result<ReturnMatrix> {
    if within.len() != a.k() {
        return Err(Error::invalid(format!(
            "{} weight vectors for {} clusters",
            within.len(),
            a.k()
        )));
    }
    let mut values = DMatrix::zeros(r.n_days(), a.k());
    for (c, (members, w)) in a.members().iter().zip(within).enumerate() {
        let sub = r.select_columns(members)?;
        let series = portfolio_returns(&sub, w).map_err(|e| e.in_cluster(c))?;
        values.set_column(c, &nalgebra::DVector::from_vec(series));
    }
    ReturnMatrix::new(
        r.dates().to_vec(),
        (0..a.k()).map(cluster_label).collect(),
        values,
    )
}

pub fn between_cluster_weights(cluster_r: &ReturnMatrix, ridge: f64) -> Result<WeightVector> {
    if cluster_r.n_assets() == 1 {
        return WeightVector::new(cluster_r.tickers().to_vec(), vec![1.0]);
    }
    gmvp_weights(&sample_covariance(cluster_r)?, ridge)
}

/// Per-stock weights `between[c(i)] · within[c(i)][i]`.
pub fn flatten(
    a: &ClusterAssignment,
    within: &[WeightVector],
    between: &WeightVector,
    tickers: &[String],
) -> Result<WeightVector> {
    if within.len() != a.k() || between.len() != a.k() || tickers.len() != a.n_points() {
        return Err(Error::invalid(
            "cluster weights do not match the assignment",
        ));
    }
    let mut values = vec![0.0; a.n_points()];
    for (c, members) in a.members().iter().enumerate() {
        if members.len() != within[c].len() {
            return Err(Error::invalid(format!(
                "cluster {c} has {} members but {} weights",
                members.len(),
                within[c].len()
            )));
        }
        for (&i, w) in members.iter().zip(&within[c].values) {
            values[i] = between.values[c] * w;
        }
    }
    WeightVector::new(tickers.to_vec(), values)
}

/// Full two-stage optimization on one estimation window.
pub fn optimize(r: &ReturnMatrix, a: &ClusterAssignment, ridge: f64) -> Result<TwoStageResult> {
    let within = within_cluster_weights(r, a, ridge)?;
    let cluster_returns = cluster_return_series(r, a, &within)?;
    let between = between_cluster_weights(&cluster_returns, ridge)?;
    let flat = flatten(a, &within, &between, r.tickers())?;
    Ok(TwoStageResult {
        within_weights: within,
        between_weights: between,
        flat_weights: flat,
        cluster_returns,
    })
}

/// Pearson correlation between cluster portfolio series.
pub fn cluster_correlation(cluster_r: &ReturnMatrix) -> Result<DMatrix<f64>> {
    let t = cluster_r.n_days();
    if t < 2 {
        return Err(Error::invalid(
            "need at least 2 observations for a correlation",
        ));
    }
    let cov = sample_covariance(cluster_r)?;
    let v = cov.values();
    let k = v.nrows();
    let sd: Vec<f64> = (0..k).map(|i| v[(i, i)].sqrt()).collect();
    for (c, s) in sd.iter().enumerate() {
        let scale = cluster_r.values().column(c).amax();
        if !(*s > 1e-14 * scale.max(f64::MIN_POSITIVE)) {
            return Err(Error::invalid(format!(
                "cluster {c} return series is constant"
            )));
        }
    }
    Ok(DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else {
            (v[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        }
    }))
}

/// Mean of the strictly upper-triangular entries.
pub fn mean_offdiag_correlation(corr: &DMatrix<f64>) -> Result<f64> {
    let k = corr.nrows();
    if k < 2 || corr.ncols() != k {
        return Err(Error::invalid(format!(
            "need a square table with k >= 2, got {k}"
        )));
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            sum += corr[(i, j)];
        }
    }
    Ok(sum / (k * (k - 1) / 2) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmvp::CovarianceMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noise(t: usize, n: usize, seed: u64) -> ReturnMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 0.01).unwrap();
        ReturnMatrix::from_values(DMatrix::from_fn(t, n, |_, _| d.sample(&mut rng))).unwrap()
    }

    fn rows(rows: &[&[f64]]) -> ReturnMatrix {
        ReturnMatrix::from_values(DMatrix::from_fn(rows.len(), rows[0].len(), |t, i| {
            rows[t][i]
        }))
        .unwrap()
    }

    /// Returns whose sample covariance is exactly diag(2, 1) · 1e-4.
    fn diag_two_one() -> ReturnMatrix {
        let a = 2f64.sqrt() * 0.01;
        let b = 0.01;
        rows(&[&[a, b], &[-a, b], &[a, -b], &[-a, -b]])
    }

    #[test]
    fn singletons_get_unit_weight() {
        let r = noise(30, 4, 1);
        let a = ClusterAssignment::new(vec![0, 1, 2, 3], 4).unwrap();
        let within = within_cluster_weights(&r, &a, 0.0).unwrap();
        assert!(within.iter().all(|w| w.values == vec![1.0]));
        let cr = cluster_return_series(&r, &a, &within).unwrap();
        assert_eq!(cr.values(), r.values());
    }

    #[test]
    fn one_cluster_is_plain_gmvp() {
        let r = noise(40, 5, 2);
        let a = ClusterAssignment::new(vec![0; 5], 1).unwrap();
        let within = within_cluster_weights(&r, &a, 0.0).unwrap();
        let direct = gmvp_weights(&sample_covariance(&r).unwrap(), 0.0).unwrap();
        assert_eq!(within[0], direct);
    }

    #[test]
    fn two_stock_cluster_diag() {
        let r = diag_two_one();
        let s = sample_covariance(&r).unwrap();
        assert!((s.values()[(0, 0)] - 2e-4 * 4.0 / 3.0).abs() < 1e-18);
        assert!(s.values()[(0, 1)].abs() < 1e-18);
        let a = ClusterAssignment::new(vec![0, 0], 1).unwrap();
        let w = &within_cluster_weights(&r, &a, 0.0).unwrap()[0];
        assert!((w.values[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((w.values[1] - 2.0 / 3.0).abs() < 1e-12);
        // same series as two clusters
        let b = between_cluster_weights(&r, 0.0).unwrap();
        assert!((b.values[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_cluster_is_rejected() {
        let r = noise(10, 3, 3);
        let a = ClusterAssignment::new(vec![0, 0, 2], 3).unwrap();
        assert!(matches!(
            within_cluster_weights(&r, &a, 0.0),
            Err(Error::EmptyCluster(1))
        ));
    }

    #[test]
    fn mirror_cluster_cancels() {
        let r = rows(&[&[0.01, -0.01], &[-0.03, 0.03], &[0.02, -0.02]]);
        let a = ClusterAssignment::new(vec![0, 0], 1).unwrap();
        let w = vec![WeightVector::new(r.tickers().to_vec(), vec![0.5, 0.5]).unwrap()];
        let cr = cluster_return_series(&r, &a, &w).unwrap();
        assert!(cr.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cluster_series_hand_computed() {
        let r = rows(&[
            &[0.01, 0.02, 0.03],
            &[0.00, -0.01, 0.02],
            &[0.04, 0.00, -0.01],
        ]);
        let a = ClusterAssignment::new(vec![0, 1, 0], 2).unwrap();
        let t = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let within = vec![
            WeightVector::new(t(&["s000", "s002"]), vec![0.25, 0.75]).unwrap(),
            WeightVector::new(t(&["s001"]), vec![1.0]).unwrap(),
        ];
        let cr = cluster_return_series(&r, &a, &within).unwrap();
        let expected = [[0.025, 0.02], [0.015, -0.01], [0.0025, 0.0]];
        for (t, row) in expected.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((cr.values()[(t, c)] - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn between_symmetric_cases() {
        let r = noise(50, 1, 4);
        assert_eq!(between_cluster_weights(&r, 0.0).unwrap().values, vec![1.0]);
        // orthogonal equal-variance columns
        let h = rows(&[
            &[0.01, 0.01, 0.01],
            &[0.01, -0.01, -0.01],
            &[-0.01, 0.01, -0.01],
            &[-0.01, -0.01, 0.01],
        ]);
        let w = between_cluster_weights(&h, 0.0).unwrap();
        for v in &w.values {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flatten_products() {
        let t = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let a = ClusterAssignment::new(vec![0, 1, 1, 0], 2).unwrap();
        let within = vec![
            WeightVector::new(t(&["a", "d"]), vec![0.4, 0.6]).unwrap(),
            WeightVector::new(t(&["b", "c"]), vec![1.5, -0.5]).unwrap(),
        ];
        let between = WeightVector::new(t(&["c0", "c1"]), vec![0.7, 0.3]).unwrap();
        let f = flatten(&a, &within, &between, &t(&["a", "b", "c", "d"])).unwrap();
        let expected = [0.28, 0.45, -0.15, 0.42];
        for (v, e) in f.values.iter().zip(expected) {
            assert!((v - e).abs() < 1e-15);
        }
        let k1 = ClusterAssignment::new(vec![0, 0], 1).unwrap();
        let w = vec![WeightVector::new(t(&["a", "b"]), vec![0.2, 0.8]).unwrap()];
        let one = WeightVector::new(t(&["c0"]), vec![1.0]).unwrap();
        assert_eq!(
            flatten(&k1, &w, &one, &t(&["a", "b"])).unwrap().values,
            vec![0.2, 0.8]
        );
    }

    #[test]
    fn degenerate_partitions_match_single_stage() {
        for seed in 0..5 {
            let r = noise(80, 6, seed);
            let single = gmvp_weights(&sample_covariance(&r).unwrap(), 0.0).unwrap();
            for labels in [vec![0; 6], (0..6).collect::<Vec<_>>()] {
                let k = labels.iter().max().unwrap() + 1;
                let a = ClusterAssignment::new(labels, k).unwrap();
                let res = optimize(&r, &a, 0.0).unwrap();
                for (x, y) in res.flat_weights.values.iter().zip(&single.values) {
                    assert!((x - y).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn in_sample_linearity() {
        let r = noise(60, 7, 9);
        let a = ClusterAssignment::new(vec![0, 1, 2, 0, 1, 2, 2], 3).unwrap();
        let res = optimize(&r, &a, 0.0).unwrap();
        assert!((res.flat_weights.sum() - 1.0).abs() < 1e-10);
        let direct = portfolio_returns(&r, &res.flat_weights).unwrap();
        let staged = portfolio_returns(&res.cluster_returns, &res.between_weights).unwrap();
        for (x, y) in direct.iter().zip(&staged) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_tables() {
        let base = noise(20, 1, 5);
        let col = base.values().column(0).into_owned();
        let same =
            ReturnMatrix::from_values(DMatrix::from_columns(&[col.clone(), col.clone()])).unwrap();
        let c = cluster_correlation(&same).unwrap();
        assert!(c.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let neg =
            ReturnMatrix::from_values(DMatrix::from_columns(&[col.clone(), -col.clone()])).unwrap();
        assert!((cluster_correlation(&neg).unwrap()[(0, 1)] + 1.0).abs() < 1e-12);
        let flat = ReturnMatrix::from_values(DMatrix::from_columns(&[
            col,
            DMatrix::from_element(20, 1, 0.01).column(0).into_owned(),
        ]))
        .unwrap();
        assert!(cluster_correlation(&flat)
            .unwrap_err()
            .to_string()
            .contains("cluster 1"));
        let indep = noise(1000, 4, 77);
        let c = cluster_correlation(&indep).unwrap();
        for i in 0..4 {
            assert_eq!(c[(i, i)], 1.0);
            for j in 0..4 {
                assert_eq!(c[(i, j)], c[(j, i)]);
                if i != j {
                    assert!(c[(i, j)].abs() < 0.1, "{}", c[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn mean_offdiag() {
        assert_eq!(
            mean_offdiag_correlation(&DMatrix::from_element(3, 3, 1.0)).unwrap(),
            1.0
        );
        assert_eq!(
            mean_offdiag_correlation(&DMatrix::identity(4, 4)).unwrap(),
            0.0
        );
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.4, 0.2, 1.0, 0.6, 0.4, 0.6, 1.0]);
        assert!((mean_offdiag_correlation(&m).unwrap() - 0.4).abs() < 1e-15);
        assert!(mean_offdiag_correlation(&DMatrix::identity(1, 1)).is_err());
    }

    #[test]
    fn covariance_of_cluster_series_is_positive() {
        let r = noise(30, 4, 6);
        let a = ClusterAssignment::new(vec![0, 0, 1, 1], 2).unwrap();
        let res = optimize(&r, &a, 0.0).unwrap();
        let s: CovarianceMatrix = sample_covariance(&res.cluster_returns).unwrap();
        assert!(s.values()[(0, 0)] > 0.0 && s.values()[(1, 1)] > 0.0);
    }
}
