//! Rolling rebalance backtest.
//!
//! Every window fits the whole pipeline on `est_len` rows, then holds the
//! resulting weights fixed over the next `hold_len` rows. Windows advance by
//! `hold_len`, so holding periods tile the sample without overlap and a
//! trailing partial window is dropped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    bounded_kmeans, hierarchical, kmeans, partition_by_label, top_m_share, ClusterAssignment,
    ClusteringConfig, Linkage,
};
use crate::error::{Error, Result};
use crate::gmvp::{gmvp_weights, portfolio_returns, sample_covariance, WeightVector};
use crate::market_data::{
    ReturnMatrix, SectorMap, TRADING_DAYS_PER_QUARTER, TRADING_DAYS_PER_YEAR,
};
use crate::metrics::{annualized_std, wealth_curve, MetricsReport};
use crate::preprocess::{pca, standard_scale, to_features, tsne, TsneParams};
use crate::two_stage::{cluster_correlation, mean_offdiag_correlation, optimize};

const CLUSTER_SEED_OFFSET: u64 = 1;
const TSNE_SEED_OFFSET: u64 = 2;
const WINDOW_SEED_STRIDE: u64 = 1_000_003;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    #[default]
    Raw,
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    None,
    Pca {
        n_components: usize,
    },
    Tsne(TsneParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Algorithm {
    Kmeans,
    BoundedKmeans { max_size: usize },
    Hierarchical { linkage: Linkage },
    Industry,
    SingleStage,
}

impl Algorithm {
    pub fn uses_features(&self) -> bool {
        !matches!(self, Algorithm::Industry | Algorithm::SingleStage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub algorithm: Algorithm,
    pub reduction: Reduction,
    pub scaling: Scaling,
    pub k: usize,
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Starting ridge for every GMVP solve.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        let c = ClusteringConfig::default();
        Self {
            algorithm: Algorithm::Kmeans,
            reduction: Reduction::None,
            scaling: Scaling::Raw,
            k: c.k,
            n_init: c.n_init,
            max_iter: c.max_iter,
            tol: c.tol,
            ridge: 0.0,
            seed: 0,
        }
    }
}

impl StrategyConfig {
    pub fn single_stage() -> Self {
        Self {
            algorithm: Algorithm::SingleStage,
            ..Self::default()
        }
    }

    pub fn industry() -> Self {
        Self {
            algorithm: Algorithm::Industry,
            ..Self::default()
        }
    }

    /// Short human-readable identifier, e.g. `bounded_kmeans(75)/pca(5)/raw`.
    pub fn label(&self) -> String {
        let algo = match self.algorithm {
            Algorithm::Kmeans => "kmeans".to_string(),
            Algorithm::BoundedKmeans { max_size } => format!("bounded_kmeans({max_size})"),
            Algorithm::Hierarchical { linkage } => {
                format!("hierarchical({})", linkage_name(linkage))
            }
            Algorithm::Industry => return "industry".to_string(),
            Algorithm::SingleStage => return "single_stage".to_string(),
        };
        format!("{algo}/{}/{}", self.reduction_label(), self.scaling_label())
    }

    pub fn algorithm_label(&self) -> String {
        match self.algorithm {
            Algorithm::Kmeans => "kmeans".into(),
            Algorithm::BoundedKmeans { max_size } => format!("bounded_kmeans(max_size={max_size})"),
            Algorithm::Hierarchical { linkage } => {
                format!("hierarchical({})", linkage_name(linkage))
            }
            Algorithm::Industry => "industry".into(),
            Algorithm::SingleStage => "single_stage".into(),
        }
    }

    pub fn reduction_label(&self) -> String {
        if !self.algorithm.uses_features() {
            return "-".into();
        }
        match self.reduction {
            Reduction::None => "none".into(),
            Reduction::Pca { n_components } => format!("pca({n_components})"),
            Reduction::Tsne(p) => format!(
                "tsne(perplexity={},learning_rate={})",
                p.perplexity, p.learning_rate
            ),
        }
    }

    pub fn scaling_label(&self) -> String {
        if !self.algorithm.uses_features() {
            return "-".into();
        }
        match self.scaling {
            Scaling::Raw => "raw".into(),
            Scaling::Standard => "standard".into(),
        }
    }

    fn clustering(&self, seed: u64) -> ClusteringConfig {
        ClusteringConfig {
            k: self.k,
            seed,
            n_init: self.n_init,
            max_iter: self.max_iter,
            tol: self.tol,
            max_size: match self.algorithm {
                Algorithm::BoundedKmeans { max_size } => Some(max_size),
                _ => None,
            },
            linkage: match self.algorithm {
                Algorithm::Hierarchical { linkage } => linkage,
                _ => Linkage::Ward,
            },
        }
    }

    /// Static checks against a universe of `n` stocks.
    pub fn validate(&self, n: usize, has_sectors: bool) -> Result<()> {
        match self.algorithm {
            Algorithm::Industry if !has_sectors => {
                return Err(Error::Config(
                    "industry baseline requires a sector file".into(),
                ))
            }
            Algorithm::Industry | Algorithm::SingleStage => return Ok(()),
            Algorithm::BoundedKmeans { max_size }
                if max_size.checked_mul(self.k).is_none_or(|t| t < n) =>
            {
                return Err(Error::Infeasible(format!(
                    "k·max_size < N ({}·{max_size} < {n})",
                    self.k
                )));
            }
            _ => {}
        }
        if self.k == 0 || self.k > n {
            return Err(Error::Config(format!("k = {} must lie in 1..={n}", self.k)));
        }
        Ok(())
    }
}

fn linkage_name(l: Linkage) -> &'static str {
    match l {
        Linkage::Ward => "ward",
        Linkage::Complete => "complete",
        Linkage::Average => "average",
        Linkage::Single => "single",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub est_len: usize,
    pub hold_len: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            est_len: TRADING_DAYS_PER_YEAR,
            hold_len: TRADING_DAYS_PER_QUARTER,
        }
    }
}

impl WindowSpec {
    /// Number of complete rebalances that fit in `t` rows.
    pub fn n_windows(&self, t: usize) -> usize {
        if self.hold_len == 0 || t < self.est_len + self.hold_len {
            0
        } else {
            (t - self.est_len) / self.hold_len
        }
    }
}

/// Fitted portfolio for one estimation window.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub flat_weights: WeightVector,
    pub assignment: Option<ClusterAssignment>,
    pub cluster_returns: Option<ReturnMatrix>,
}

/// Cluster the estimation window (when the strategy clusters) and solve.
pub fn fit_window(
    est: &ReturnMatrix,
    cfg: &StrategyConfig,
    sectors: Option<&SectorMap>,
    seed: u64,
) -> Result<Fit> {
    let assignment = match cfg.algorithm {
        Algorithm::SingleStage => {
            let w = gmvp_weights(&sample_covariance(est)?, cfg.ridge)?;
            return Ok(Fit {
                flat_weights: w,
                assignment: None,
                cluster_returns: None,
            });
        }
        Algorithm::Industry => {
            let sectors = sectors
                .ok_or_else(|| Error::Config("industry baseline requires a sector file".into()))?;
            partition_by_label(sectors, est.tickers())?.0
        }
        _ => {
            let mut x = to_features(est)?;
            if cfg.scaling == Scaling::Standard {
                x = standard_scale(&x);
            }
            x = match cfg.reduction {
                Reduction::None => x,
                Reduction::Pca { n_components } => pca(&x, n_components)?,
                Reduction::Tsne(params) => tsne(&x, &params, seed.wrapping_add(TSNE_SEED_OFFSET))?,
            };
            let ccfg = cfg.clustering(seed.wrapping_add(CLUSTER_SEED_OFFSET));
            match cfg.algorithm {
                Algorithm::Kmeans => kmeans(&x, &ccfg)?,
                Algorithm::BoundedKmeans { .. } => bounded_kmeans(&x, &ccfg)?,
                Algorithm::Hierarchical { .. } => hierarchical(&x, &ccfg)?,
                Algorithm::Industry | Algorithm::SingleStage => unreachable!(),
            }
        }
    };
    let res = optimize(est, &assignment, cfg.ridge)?;
    Ok(Fit {
        flat_weights: res.flat_weights,
        assignment: Some(assignment),
        cluster_returns: Some(res.cluster_returns),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceRecord {
    pub window_index: usize,
    /// Estimation rows `[est_start, hold_start)`.
    pub est_start: usize,
    /// Holding rows `[hold_start, hold_end)`.
    pub hold_start: usize,
    pub hold_end: usize,
    pub rebalance_date: String,
    pub in_sample_std: f64,
    pub out_sample_std: f64,
    pub flat_weights: WeightVector,
    pub cluster_sizes: Vec<usize>,
    pub cluster_labels: Option<Vec<usize>>,
    pub mean_cluster_correlation: Option<f64>,
    pub cluster_correlation: Option<Vec<Vec<f64>>>,
}

impl RebalanceRecord {
    /// Share of the five largest clusters (all of them when k < 5).
    pub fn top5_share(&self) -> Option<f64> {
        let labels = self.cluster_labels.as_ref()?;
        let a = ClusterAssignment::new(labels.clone(), self.cluster_sizes.len()).ok()?;
        top_m_share(&a, a.k().min(5)).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub strategy: String,
    pub records: Vec<RebalanceRecord>,
    pub oos_dates: Vec<String>,
    pub oos_returns: Vec<f64>,
    pub wealth: Vec<f64>,
}

pub fn window_seed(seed: u64, window: usize) -> u64 {
    seed.wrapping_add((window as u64).wrapping_mul(WINDOW_SEED_STRIDE))
}

fn run_window(
    r: &ReturnMatrix,
    cfg: &StrategyConfig,
    windows: WindowSpec,
    sectors: Option<&SectorMap>,
    w: usize,
) -> Result<(RebalanceRecord, Vec<f64>)> {
    let est_start = w * windows.hold_len;
    let hold_start = est_start + windows.est_len;
    let est = r.slice_window(est_start, windows.est_len)?;
    let hold = r.slice_window(hold_start, windows.hold_len)?;
    let fit = fit_window(&est, cfg, sectors, window_seed(cfg.seed, w))?;

    let in_sample = portfolio_returns(&est, &fit.flat_weights)?;
    let oos = portfolio_returns(&hold, &fit.flat_weights)?;
    let (correlation, mean_corr) = match &fit.cluster_returns {
        Some(cr) if cr.n_assets() >= 2 => match cluster_correlation(cr) {
            Ok(c) => {
                let mean = mean_offdiag_correlation(&c).ok();
                let rows = c
                    .row_iter()
                    .map(|row| row.iter().copied().collect())
                    .collect();
                (Some(rows), mean)
            }
            Err(e) => {
                log::warn!("window {w}: no cluster correlation: {e}");
                (None, None)
            }
        },
        Some(_) => (Some(vec![vec![1.0]]), None),
        None => (None, None),
    };
    let record = RebalanceRecord {
        window_index: w,
        est_start,
        hold_start,
        hold_end: hold_start + windows.hold_len,
        rebalance_date: hold.dates()[0].clone(),
        in_sample_std: annualized_std(&in_sample)?,
        out_sample_std: if oos.len() >= 2 {
            annualized_std(&oos)?
        } else {
            0.0
        },
        flat_weights: fit.flat_weights,
        cluster_sizes: fit
            .assignment
            .as_ref()
            .map(|a| a.sizes().to_vec())
            .unwrap_or_default(),
        cluster_labels: fit.assignment.map(|a| a.labels().to_vec()),
        mean_cluster_correlation: mean_corr,
        cluster_correlation: correlation,
    };
    Ok((record, oos))
}

pub fn run_backtest(
    r: &ReturnMatrix,
    cfg: &StrategyConfig,
    windows: WindowSpec,
    sectors: Option<&SectorMap>,
) -> Result<BacktestResult> {
    if windows.est_len < 2 || windows.hold_len == 0 {
        return Err(Error::Config(format!(
            "estimation window must be >= 2 and holding window >= 1 (got {} / {})",
            windows.est_len, windows.hold_len
        )));
    }
    let n_windows = windows.n_windows(r.n_days());
    if n_windows == 0 {
        return Err(Error::Config(format!(
            "{} return rows cannot hold one {}+{} window",
            r.n_days(),
            windows.est_len,
            windows.hold_len
        )));
    }
    cfg.validate(r.n_assets(), sectors.is_some())?;
    let outcomes: Vec<Result<(RebalanceRecord, Vec<f64>)>> = (0..n_windows)
        .into_par_iter()
        .map(|w| run_window(r, cfg, windows, sectors, w).map_err(|e| e.in_window(w)))
        .collect();
    let mut records = Vec::with_capacity(n_windows);
    let mut oos_returns = Vec::with_capacity(n_windows * windows.hold_len);
    let mut oos_dates = Vec::with_capacity(n_windows * windows.hold_len);
    for outcome in outcomes {
        let (record, oos) = outcome?;
        oos_dates.extend_from_slice(&r.dates()[record.hold_start..record.hold_end]);
        oos_returns.extend(oos);
        records.push(record);
    }
    let wealth = wealth_curve(&oos_returns);
    Ok(BacktestResult {
        strategy: cfg.label(),
        records,
        oos_dates,
        oos_returns,
        wealth,
    })
}

/// Relative gap between out-of-sample and in-sample volatility, in percent.
pub fn estimation_error_pct(in_std: f64, out_std: f64) -> Result<f64> {
    if !(in_std > 0.0) {
        return Err(Error::invalid(format!(
            "in-sample std must be positive, got {in_std}"
        )));
    }
    Ok(100.0 * (out_std - in_std) / in_std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: String,
    pub n_rebalances: usize,
    /// Mean of the per-window annualized in-sample stds.
    pub in_sample_std: f64,
    /// Annualized std of the concatenated out-of-sample series.
    pub out_sample_std: f64,
    pub estimation_error_pct: f64,
    pub mean_cluster_correlation: Option<f64>,
    pub mean_top5_share: Option<f64>,
    pub metrics: Option<MetricsReport>,
    pub final_wealth: f64,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Summary statistics of a backtest; `rate` is the daily Sharpe benchmark
/// and Sortino target.
pub fn aggregate(result: &BacktestResult, rate: f64) -> Result<Summary> {
    if result.records.is_empty() {
        return Err(Error::invalid("backtest has no rebalances"));
    }
    let in_sample_std =
        result.records.iter().map(|r| r.in_sample_std).sum::<f64>() / result.records.len() as f64;
    let out_sample_std = annualized_std(&result.oos_returns)?;
    let metrics = match MetricsReport::compute(&result.oos_returns, rate) {
        Ok(m) => Some(m),
        Err(e) => {
            log::warn!("{}: metrics unavailable: {e}", result.strategy);
            None
        }
    };
    Ok(Summary {
        strategy: result.strategy.clone(),
        n_rebalances: result.records.len(),
        in_sample_std,
        out_sample_std,
        estimation_error_pct: estimation_error_pct(in_sample_std, out_sample_std)?,
        mean_cluster_correlation: mean_of(
            result.records.iter().map(|r| r.mean_cluster_correlation),
        ),
        mean_top5_share: mean_of(result.records.iter().map(RebalanceRecord::top5_share)),
        metrics,
        final_wealth: result.wealth.last().copied().unwrap_or(1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub max_size: usize,
    pub oos_ann_std: f64,
    pub estimation_error_pct: f64,
    pub mean_cluster_correlation: Option<f64>,
    pub top5_share: Option<f64>,
}

/// Bounded k-means backtests across cluster-size caps, sharing one seed.
pub fn sweep_max_size(
    r: &ReturnMatrix,
    base: &StrategyConfig,
    sizes: &[usize],
    windows: WindowSpec,
) -> Result<Vec<SweepPoint>> {
    let n = r.n_assets();
    if let Some(&bad) = sizes
        .iter()
        .find(|&&s| s.checked_mul(base.k).is_none_or(|t| t < n))
    {
        return Err(Error::Infeasible(format!(
            "max_size {bad}: k·max_size < N ({}·{bad} < {n})",
            base.k
        )));
    }
    sizes
        .par_iter()
        .map(|&max_size| {
            let cfg = StrategyConfig {
                algorithm: Algorithm::BoundedKmeans { max_size },
                ..base.clone()
            };
            let result = run_backtest(r, &cfg, windows, None)?;
            let summary = aggregate(&result, 0.0)?;
            Ok(SweepPoint {
                max_size,
                oos_ann_std: summary.out_sample_std,
                estimation_error_pct: summary.estimation_error_pct,
                mean_cluster_correlation: summary.mean_cluster_correlation,
                top5_share: summary.mean_top5_share,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noise(t: usize, n: usize, seed: u64) -> ReturnMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0005, 0.01).unwrap();
        ReturnMatrix::from_values(DMatrix::from_fn(t, n, |_, _| d.sample(&mut rng))).unwrap()
    }

    fn small() -> WindowSpec {
        WindowSpec {
            est_len: 40,
            hold_len: 10,
        }
    }

    #[test]
    fn window_count() {
        let w = WindowSpec::default();
        assert_eq!(w.n_windows(252 + 63), 1);
        assert_eq!(w.n_windows(252 + 63 * 5 + 62), 5);
        assert_eq!(w.n_windows(300), 0);
        let r = noise(315, 3, 1);
        let res = run_backtest(&r, &StrategyConfig::single_stage(), w, None).unwrap();
        assert_eq!(res.records.len(), 1);
        assert_eq!(res.oos_returns.len(), 63);
        assert!(run_backtest(&noise(300, 3, 1), &StrategyConfig::single_stage(), w, None).is_err());
    }

    #[test]
    fn no_look_ahead_and_wealth() {
        let r = noise(200, 6, 2);
        let cfg = StrategyConfig {
            k: 2,
            n_init: 2,
            ..StrategyConfig::default()
        };
        let res = run_backtest(&r, &cfg, small(), None).unwrap();
        assert_eq!(res.records.len(), (200 - 40) / 10);
        assert_eq!(res.oos_returns.len(), res.records.len() * 10);
        for (j, rec) in res.records.iter().enumerate() {
            assert_eq!(rec.window_index, j);
            assert_eq!(rec.hold_start, rec.est_start + 40);
            assert!(rec.hold_start >= rec.est_start + 40);
            assert_eq!(rec.rebalance_date, r.dates()[rec.hold_start]);
            assert!((rec.flat_weights.sum() - 1.0).abs() < 1e-10);
        }
        let rebuilt = wealth_curve(&res.oos_returns);
        for (a, b) in rebuilt.iter().zip(&res.wealth) {
            assert!(((a - b) / b).abs() < 1e-12);
        }
        let again = run_backtest(&r, &cfg, small(), None).unwrap();
        assert_eq!(
            serde_json::to_string(&res).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn single_asset_passes_returns_through() {
        let r = noise(100, 1, 3);
        let res = run_backtest(&r, &StrategyConfig::single_stage(), small(), None).unwrap();
        let expected: Vec<f64> = r
            .values()
            .column(0)
            .iter()
            .skip(40)
            .take(res.oos_returns.len())
            .copied()
            .collect();
        assert_eq!(res.oos_returns, expected);
    }

    #[test]
    fn single_stage_recovers_population_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = Normal::new(0.0, 2f64.sqrt() * 0.01).unwrap();
        let b = Normal::new(0.0, 0.01).unwrap();
        let r = ReturnMatrix::from_values(DMatrix::from_fn(5000, 2, |_, i| {
            if i == 0 {
                a.sample(&mut rng)
            } else {
                b.sample(&mut rng)
            }
        }))
        .unwrap();
        let res = run_backtest(
            &r,
            &StrategyConfig::single_stage(),
            WindowSpec::default(),
            None,
        )
        .unwrap();
        assert_eq!(res.records.len(), (5000 - 252) / 63);
        for rec in &res.records {
            assert!((rec.flat_weights.values[0] - 1.0 / 3.0).abs() < 0.1);
            assert!((rec.flat_weights.values[1] - 2.0 / 3.0).abs() < 0.1);
        }
    }

    #[test]
    fn estimation_error_formula() {
        assert!((estimation_error_pct(0.0489, 0.0946).unwrap() - 93.456).abs() < 0.01);
        assert!((estimation_error_pct(0.0462, 0.0798).unwrap() - 72.727).abs() < 0.01);
        assert_eq!(estimation_error_pct(0.05, 0.05).unwrap(), 0.0);
        assert!(estimation_error_pct(0.0, 0.1).is_err());
    }

    #[test]
    fn aggregate_single_window() {
        let r = noise(50, 3, 4);
        let res = run_backtest(&r, &StrategyConfig::single_stage(), small(), None).unwrap();
        assert_eq!(res.records.len(), 1);
        let s = aggregate(&res, 0.0).unwrap();
        assert_eq!(s.in_sample_std, res.records[0].in_sample_std);
        assert_eq!(s.out_sample_std, res.records[0].out_sample_std);
        let empty = BacktestResult {
            records: vec![],
            ..res
        };
        assert!(aggregate(&empty, 0.0).is_err());
    }

    #[test]
    fn aggregate_identical_windows() {
        let r = noise(50, 3, 4);
        let one = run_backtest(&r, &StrategyConfig::single_stage(), small(), None).unwrap();
        let mut two = one.clone();
        let mut rec = one.records[0].clone();
        rec.window_index = 1;
        two.records.push(rec);
        two.oos_returns.extend(one.oos_returns.clone());
        let a = aggregate(&one, 0.0).unwrap();
        let b = aggregate(&two, 0.0).unwrap();
        assert_eq!(a.in_sample_std, b.in_sample_std);
        // the concatenated series repeats itself, so only the n-1 divisor moves
        let n = one.oos_returns.len() as f64;
        let corrected = a.out_sample_std * ((n - 1.0) * 2.0 * n / (n * (2.0 * n - 1.0))).sqrt();
        assert!((b.out_sample_std - corrected).abs() < 1e-12);
    }

    #[test]
    fn industry_requires_sectors() {
        let r = noise(60, 4, 5);
        let err = run_backtest(&r, &StrategyConfig::industry(), small(), None).unwrap_err();
        assert!(err.is_user_error());
        let map =
            SectorMap::from_pairs([("s000", "A"), ("s001", "B"), ("s002", "A"), ("s003", "B")])
                .unwrap();
        let res = run_backtest(&r, &StrategyConfig::industry(), small(), Some(&map)).unwrap();
        assert_eq!(res.records[0].cluster_sizes, vec![2, 2]);
    }

    #[test]
    fn sweep_checks_feasibility() {
        let r = noise(80, 8, 6);
        let base = StrategyConfig {
            k: 2,
            n_init: 2,
            ..StrategyConfig::default()
        };
        let err = sweep_max_size(&r, &base, &[4, 3], small()).unwrap_err();
        assert!(err.to_string().contains("max_size 3"));
        let pts = sweep_max_size(&r, &base, &[8], small()).unwrap();
        let unbounded = aggregate(&run_backtest(&r, &base, small(), None).unwrap(), 0.0).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].oos_ann_std, unbounded.out_sample_std);
    }

    #[test]
    fn labels() {
        let cfg = StrategyConfig {
            algorithm: Algorithm::BoundedKmeans { max_size: 75 },
            reduction: Reduction::Pca { n_components: 5 },
            ..StrategyConfig::default()
        };
        assert_eq!(cfg.label(), "bounded_kmeans(75)/pca(5)/raw");
        assert_eq!(StrategyConfig::single_stage().label(), "single_stage");
    }
}
