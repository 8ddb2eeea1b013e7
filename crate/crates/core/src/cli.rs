//! Command-line front end: experiment configuration, orchestration and
//! report files.
//!
//! Every command reads one JSON [`ExperimentConfig`]; flags override the
//! file. Relative data paths resolve against the config file's directory.
//! Output rows are written in configuration order once all cells finish.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtest::{
    aggregate, run_backtest, sweep_max_size, Algorithm, BacktestResult, Reduction, Scaling,
    StrategyConfig, Summary, SweepPoint, WindowSpec,
};
use crate::clustering::{cluster_shares, ClusterAssignment, Linkage};
use crate::error::{Error, Result};
use crate::market_data::{
    compute_returns, load_prices, load_sector_map, write_prices, ReturnMatrix, SectorMap,
};
use crate::metrics::MetricsReport;
use crate::preprocess::TsneParams;
use crate::synthetic::{prices_from_returns, synthetic_date, FactorModel};

pub const THREADS_ENV: &str = "CLUSTER_GMVP_THREADS";

/// Seed offset between repeats of the same strategy.
const REPEAT_SEED_STRIDE: u64 = 7_919;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    #[default]
    Validation,
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub algorithms: Vec<Algorithm>,
    pub reductions: Vec<Reduction>,
    pub scalings: Vec<Scaling>,
    /// Append the single-stage and (with a sector file) industry baselines.
    pub baselines: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            algorithms: vec![
                Algorithm::Kmeans,
                Algorithm::Hierarchical {
                    linkage: Linkage::Ward,
                },
                Algorithm::BoundedKmeans { max_size: 75 },
            ],
            reductions: vec![
                Reduction::None,
                Reduction::Pca { n_components: 10 },
                Reduction::Tsne(TsneParams::default()),
            ],
            scalings: vec![Scaling::Standard, Scaling::Raw],
            baselines: true,
        }
    }
}

impl GridSpec {
    pub fn cells(&self, base: &StrategyConfig) -> Vec<StrategyConfig> {
        let mut out = Vec::new();
        for &algorithm in &self.algorithms {
            for &reduction in &self.reductions {
                for &scaling in &self.scalings {
                    out.push(StrategyConfig {
                        algorithm,
                        reduction,
                        scaling,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub prices: PathBuf,
    pub sectors: Option<PathBuf>,
    /// First date of the test period; earlier rows form the validation period.
    pub split_date: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub est_len: usize,
    pub hold_len: usize,
    /// Daily Sharpe benchmark and Sortino target.
    pub rate: f64,
    pub strategy: StrategyConfig,
    /// `run` also reports the single-stage and industry baselines.
    pub baselines: bool,
    pub repeats: usize,
    pub grid: GridSpec,
    pub sizes: Vec<usize>,
    /// Rows used by `sweep` and `diagnose`.
    pub period: Period,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let w = WindowSpec::default();
        Self {
            prices: PathBuf::from("prices.csv"),
            sectors: None,
            split_date: String::new(),
            out_dir: PathBuf::from("out"),
            seed: 0,
            est_len: w.est_len,
            hold_len: w.hold_len,
            rate: 0.0,
            strategy: StrategyConfig::default(),
            baselines: true,
            repeats: 1,
            grid: GridSpec::default(),
            sizes: vec![],
            period: Period::Validation,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.prices = resolve(base, &cfg.prices);
        cfg.sectors = cfg.sectors.map(|s| resolve(base, &s));
        Ok(cfg)
    }

    pub fn windows(&self) -> WindowSpec {
        WindowSpec {
            est_len: self.est_len,
            hold_len: self.hold_len,
        }
    }

    /// Strategy with the global seed applied.
    pub fn seeded_strategy(&self) -> StrategyConfig {
        StrategyConfig {
            seed: self.seed,
            ..self.strategy.clone()
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loaded data split into validation and test return panels.
///
/// The test panel starts `est_len` rows before the split so its first
/// holding period begins exactly on the split date.
pub struct Dataset {
    returns: ReturnMatrix,
    split: usize,
    est_len: usize,
    pub sectors: Option<SectorMap>,
}

impl Dataset {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let returns = compute_returns(&load_prices(&cfg.prices)?)?;
        let sectors = cfg.sectors.as_deref().map(load_sector_map).transpose()?;
        Self::new(returns, sectors, cfg)
    }

    pub fn new(
        returns: ReturnMatrix,
        sectors: Option<SectorMap>,
        cfg: &ExperimentConfig,
    ) -> Result<Self> {
        let windows = cfg.windows();
        if windows.est_len < 2 || windows.hold_len == 0 {
            return Err(Error::Config(
                "est_len must be >= 2 and hold_len >= 1".into(),
            ));
        }
        let t = returns.n_days();
        let split = returns.first_row_on_or_after(&cfg.split_date);
        if cfg.split_date.is_empty() || split == 0 || split >= t {
            return Err(Error::Config(format!(
                "split_date `{}` must fall inside the data range {}..={}",
                cfg.split_date,
                returns.dates()[0],
                returns.dates()[t - 1]
            )));
        }
        if windows.n_windows(split) == 0 {
            return Err(Error::Config(format!(
                "validation period has {split} rows, fewer than one {}+{} window",
                windows.est_len, windows.hold_len
            )));
        }
        if split < windows.est_len || windows.n_windows(t - split + windows.est_len) == 0 {
            return Err(Error::Config(format!(
                "test period from {} cannot hold one {}-day holding window after a {}-day lookback",
                cfg.split_date, windows.hold_len, windows.est_len
            )));
        }
        Ok(Self {
            returns,
            split,
            est_len: windows.est_len,
            sectors,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.returns.n_assets()
    }

    pub fn validation(&self) -> Result<ReturnMatrix> {
        self.returns.slice_window(0, self.split)
    }

    /// Test rows plus the lookback feeding the first test estimate.
    pub fn test(&self) -> Result<ReturnMatrix> {
        let start = self.split - self.est_len;
        self.returns
            .slice_window(start, self.returns.n_days() - start)
    }

    pub fn period(&self, p: Period) -> Result<ReturnMatrix> {
        match p {
            Period::Validation => self.validation(),
            Period::Test => self.test(),
            Period::All => Ok(self.returns.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct PeriodReport {
    #[serde(flatten)]
    summary: Summary,
    #[serde(skip)]
    result: BacktestResult,
}

#[derive(Debug, Clone, Serialize)]
struct StrategyReport {
    name: String,
    role: &'static str,
    config: StrategyConfig,
    validation: PeriodReport,
    test: PeriodReport,
}

#[derive(Debug, Clone, Serialize)]
struct RepeatStats {
    repeats: usize,
    mean_validation_std: f64,
    std_validation_std: f64,
    mean_test_std: f64,
    std_test_std: f64,
    mean_test_estimation_error_pct: f64,
    std_test_estimation_error_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
struct RunSummary {
    split_date: String,
    seed: u64,
    est_len: usize,
    hold_len: usize,
    rate: f64,
    strategies: Vec<StrategyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    repeats: Option<RepeatStats>,
}

fn evaluate(
    data: &ReturnMatrix,
    cfg: &StrategyConfig,
    exp: &ExperimentConfig,
    sectors: Option<&SectorMap>,
) -> Result<PeriodReport> {
    let result = run_backtest(data, cfg, exp.windows(), sectors)?;
    let summary = aggregate(&result, exp.rate)?;
    Ok(PeriodReport { summary, result })
}

fn baseline_configs(exp: &ExperimentConfig, has_sectors: bool) -> Vec<StrategyConfig> {
    let mut out = vec![StrategyConfig {
        seed: exp.seed,
        ridge: exp.strategy.ridge,
        ..StrategyConfig::single_stage()
    }];
    if has_sectors {
        out.push(StrategyConfig {
            seed: exp.seed,
            ridge: exp.strategy.ridge,
            ..StrategyConfig::industry()
        });
    }
    out
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl CsvOut {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        let writer = csv::Writer::from_path(&path).map_err(|source| Error::Csv {
            path: path.clone(),
            source,
        })?;
        let mut out = Self { path, writer };
        out.row(header.iter().map(|s| s.to_string()))?;
        Ok(out)
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<()> {
        let fields: Vec<String> = fields.into_iter().collect();
        self.writer
            .write_record(&fields)
            .map_err(|source| Error::Csv {
                path: self.path.clone(),
                source,
            })
    }

    fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|source| Error::Io {
            path: self.path.clone(),
            source,
        })
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

const METRIC_COLUMNS: [&str; 6] = [
    "sharpe",
    "sortino",
    "ann_std",
    "ann_downside_std",
    "max_drawdown",
    "cvar_95",
];

fn metric_fields(m: Option<&MetricsReport>) -> Vec<String> {
    match m {
        Some(m) => vec![
            num(m.sharpe),
            num(m.sortino),
            num(m.ann_std),
            num(m.ann_downside_std),
            num(m.max_drawdown),
            num(m.cvar_95),
        ],
        None => vec![String::new(); 6],
    }
}

/// Risk measures, one row per strategy and period.
fn write_metrics(path: PathBuf, rows: &[(&str, &str, &Summary)]) -> Result<()> {
    let mut header = vec!["strategy", "period"];
    header.extend(METRIC_COLUMNS);
    let mut out = CsvOut::create(path, &header)?;
    for (name, period, s) in rows {
        let mut fields = vec![name.to_string(), period.to_string()];
        fields.extend(metric_fields(s.metrics.as_ref()));
        out.row(fields)?;
    }
    out.finish()
}

/// In-sample vs out-of-sample volatility per strategy and period.
fn write_estimation_error(path: PathBuf, rows: &[(&str, &str, &Summary)]) -> Result<()> {
    let mut out = CsvOut::create(
        path,
        &[
            "strategy",
            "period",
            "in_sample_std",
            "out_sample_std",
            "estimation_error_pct",
        ],
    )?;
    for (name, period, s) in rows {
        out.row([
            name.to_string(),
            period.to_string(),
            num(s.in_sample_std),
            num(s.out_sample_std),
            num(s.estimation_error_pct),
        ])?;
    }
    out.finish()
}

fn write_wealth(path: PathBuf, reports: &[&StrategyReport]) -> Result<()> {
    let mut header = vec!["period".to_string(), "date".to_string()];
    header.extend(reports.iter().map(|r| r.name.clone()));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = CsvOut::create(path, &header_refs)?;
    for (period, pick) in [
        (
            "validation",
            (|r: &StrategyReport| &r.validation) as fn(&StrategyReport) -> &PeriodReport,
        ),
        ("test", |r: &StrategyReport| &r.test),
    ] {
        let first = &pick(reports[0]).result;
        for (t, date) in first.oos_dates.iter().enumerate() {
            let mut fields = vec![period.to_string(), date.clone()];
            fields.extend(reports.iter().map(|r| num(pick(r).result.wealth[t])));
            out.row(fields)?;
        }
    }
    out.finish()
}

fn write_weights(path: PathBuf, reports: &[&StrategyReport]) -> Result<()> {
    let mut out = CsvOut::create(
        path,
        &[
            "strategy",
            "period",
            "window_index",
            "rebalance_date",
            "ticker",
            "weight",
        ],
    )?;
    for r in reports {
        for (period, res) in [
            ("validation", &r.validation.result),
            ("test", &r.test.result),
        ] {
            for rec in &res.records {
                for (ticker, w) in rec.flat_weights.labels.iter().zip(&rec.flat_weights.values) {
                    out.row([
                        r.name.clone(),
                        period.to_string(),
                        rec.window_index.to_string(),
                        rec.rebalance_date.clone(),
                        ticker.clone(),
                        num(*w),
                    ])?;
                }
            }
        }
    }
    out.finish()
}

fn evaluate_both(
    data: &Dataset,
    cfg: &StrategyConfig,
    exp: &ExperimentConfig,
) -> Result<(PeriodReport, PeriodReport)> {
    let sectors = data.sectors.as_ref();
    let validation = evaluate(&data.validation()?, cfg, exp, sectors)?;
    let test = evaluate(&data.test()?, cfg, exp, sectors)?;
    Ok((validation, test))
}

/// `run`: one strategy plus baselines over the validation and test periods.
pub fn cmd_run(exp: &ExperimentConfig) -> Result<()> {
    let data = Dataset::load(exp)?;
    let strategy = exp.seeded_strategy();
    strategy.validate(data.n_assets(), data.sectors.is_some())?;
    let mut configs = vec![(strategy.clone(), "strategy")];
    if exp.baselines {
        for b in baseline_configs(exp, data.sectors.is_some()) {
            if b.algorithm != strategy.algorithm {
                configs.push((b, "baseline"));
            }
        }
    }
    let evaluated: Vec<Result<(PeriodReport, PeriodReport)>> = configs
        .par_iter()
        .map(|(cfg, _)| evaluate_both(&data, cfg, exp).map_err(|e| annotate(e, cfg)))
        .collect();
    let mut strategies = Vec::new();
    for ((cfg, role), outcome) in configs.into_iter().zip(evaluated) {
        let (validation, test) = outcome?;
        strategies.push(StrategyReport {
            name: cfg.label(),
            role,
            config: cfg,
            validation,
            test,
        });
    }

    let repeats = if exp.repeats > 1 {
        let runs: Vec<Result<(PeriodReport, PeriodReport)>> = (0..exp.repeats)
            .into_par_iter()
            .map(|i| {
                let cfg = StrategyConfig {
                    seed: exp.seed.wrapping_add(i as u64 * REPEAT_SEED_STRIDE),
                    ..strategy.clone()
                };
                evaluate_both(&data, &cfg, exp)
            })
            .collect();
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let pick = |f: &dyn Fn(&(PeriodReport, PeriodReport)) -> f64| -> (f64, f64) {
            mean_std(&runs.iter().map(f).collect::<Vec<_>>())
        };
        let (mv, sv) = pick(&|r| r.0.summary.out_sample_std);
        let (mt, st) = pick(&|r| r.1.summary.out_sample_std);
        let (me, se) = pick(&|r| r.1.summary.estimation_error_pct);
        Some(RepeatStats {
            repeats: exp.repeats,
            mean_validation_std: mv,
            std_validation_std: sv,
            mean_test_std: mt,
            std_test_std: st,
            mean_test_estimation_error_pct: me,
            std_test_estimation_error_pct: se,
        })
    } else {
        None
    };

    ensure_dir(&exp.out_dir)?;
    let summary = RunSummary {
        split_date: exp.split_date.clone(),
        seed: exp.seed,
        est_len: exp.est_len,
        hold_len: exp.hold_len,
        rate: exp.rate,
        strategies,
        repeats,
    };
    write_json(&exp.out_dir.join("summary.json"), &summary)?;
    let rows: Vec<(&str, &str, &Summary)> = summary
        .strategies
        .iter()
        .flat_map(|s| {
            [
                (s.name.as_str(), "validation", &s.validation.summary),
                (s.name.as_str(), "test", &s.test.summary),
            ]
        })
        .collect();
    write_metrics(exp.out_dir.join("metrics.csv"), &rows)?;
    write_estimation_error(exp.out_dir.join("estimation_error.csv"), &rows)?;
    let refs: Vec<&StrategyReport> = summary.strategies.iter().collect();
    write_wealth(exp.out_dir.join("wealth.csv"), &refs)?;
    write_weights(exp.out_dir.join("weights.csv"), &refs)?;
    Ok(())
}

fn annotate(e: Error, cfg: &StrategyConfig) -> Error {
    log::debug!("{}: {e}", cfg.label());
    e
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub strategy: String,
    pub role: &'static str,
    pub algorithm: String,
    pub reduction: String,
    pub scaling: String,
    pub validation: Option<Summary>,
    pub test: Option<Summary>,
    pub selected: bool,
    pub error: Option<String>,
}

/// Evaluate every grid cell on the validation period, pick the lowest
/// validation volatility, and only then touch the test period.
pub fn grid_rows(data: &Dataset, exp: &ExperimentConfig) -> Result<Vec<GridRow>> {
    let base = exp.seeded_strategy();
    let mut cells: Vec<(StrategyConfig, &'static str)> = exp
        .grid
        .cells(&base)
        .into_iter()
        .map(|c| (c, "cell"))
        .collect();
    if exp.grid.baselines {
        cells.extend(
            baseline_configs(exp, data.sectors.is_some())
                .into_iter()
                .map(|c| (c, "baseline")),
        );
    }
    if cells.is_empty() {
        return Err(Error::Config("grid has no cells".into()));
    }
    let sectors = data.sectors.as_ref();
    let validation = data.validation()?;
    let val: Vec<Result<Summary>> = cells
        .par_iter()
        .map(|(cfg, _)| {
            cfg.validate(data.n_assets(), sectors.is_some())?;
            evaluate(&validation, cfg, exp, sectors).map(|r| r.summary)
        })
        .collect();

    let selected = val
        .iter()
        .zip(&cells)
        .enumerate()
        .filter_map(|(i, (v, (_, role)))| match v {
            Ok(s) if *role == "cell" => Some((i, s.out_sample_std)),
            _ => None,
        })
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i);

    let test = data.test()?;
    let tst: Vec<Option<Result<Summary>>> = cells
        .par_iter()
        .zip(&val)
        .map(|((cfg, _), v)| {
            v.as_ref()
                .ok()
                .map(|_| evaluate(&test, cfg, exp, sectors).map(|r| r.summary))
        })
        .collect();

    Ok(cells
        .into_iter()
        .zip(val.into_iter().zip(tst))
        .enumerate()
        .map(|(i, ((cfg, role), (v, t)))| {
            let (validation, mut error) = match v {
                Ok(s) => (Some(s), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let test = match t {
                Some(Ok(s)) => Some(s),
                Some(Err(e)) => {
                    error = Some(e.to_string());
                    None
                }
                None => None,
            };
            GridRow {
                strategy: cfg.label(),
                role,
                algorithm: cfg.algorithm_label(),
                reduction: cfg.reduction_label(),
                scaling: cfg.scaling_label(),
                validation,
                test,
                selected: selected == Some(i),
                error,
            }
        })
        .collect())
}

/// `grid`: one row per cell plus metric and estimation-error rows for the
/// selected cell and the baselines.
pub fn cmd_grid(exp: &ExperimentConfig) -> Result<()> {
    let data = Dataset::load(exp)?;
    let rows = grid_rows(&data, exp)?;
    ensure_dir(&exp.out_dir)?;
    let mut out = CsvOut::create(
        exp.out_dir.join("grid.csv"),
        &[
            "strategy",
            "role",
            "algorithm",
            "reduction",
            "scaling",
            "validation_std",
            "test_std",
            "validation_in_sample_std",
            "test_in_sample_std",
            "test_estimation_error_pct",
            "selected",
            "error",
        ],
    )?;
    for r in &rows {
        let v = r.validation.as_ref();
        let t = r.test.as_ref();
        out.row([
            r.strategy.clone(),
            r.role.to_string(),
            r.algorithm.clone(),
            r.reduction.clone(),
            r.scaling.clone(),
            opt(v.map(|s| s.out_sample_std)),
            opt(t.map(|s| s.out_sample_std)),
            opt(v.map(|s| s.in_sample_std)),
            opt(t.map(|s| s.in_sample_std)),
            opt(t.map(|s| s.estimation_error_pct)),
            r.selected.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    out.finish()?;
    let report: Vec<(&str, &str, &Summary)> = rows
        .iter()
        .filter(|r| r.selected || r.role == "baseline")
        .filter_map(|r| r.test.as_ref().map(|s| (r.strategy.as_str(), "test", s)))
        .collect();
    write_metrics(exp.out_dir.join("metrics.csv"), &report)?;
    write_estimation_error(exp.out_dir.join("estimation_error.csv"), &report)?;
    write_json(&exp.out_dir.join("grid.json"), &rows)?;
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "warning: {}: {}",
            r.strategy,
            r.error.as_deref().unwrap_or_default()
        );
    }
    Ok(())
}

/// Sorted, de-duplicated sizes; duplicates are reported.
pub fn dedup_sizes(sizes: &[usize]) -> Vec<usize> {
    let unique: BTreeSet<usize> = sizes.iter().copied().collect();
    if unique.len() != sizes.len() {
        eprintln!("warning: duplicate max sizes removed: {sizes:?}");
    }
    unique.into_iter().collect()
}

pub fn sweep_points(data: &Dataset, exp: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    if exp.sizes.is_empty() {
        return Err(Error::Config("sweep needs a non-empty `sizes` list".into()));
    }
    let sizes = dedup_sizes(&exp.sizes);
    let returns = data.period(exp.period)?;
    sweep_max_size(&returns, &exp.seeded_strategy(), &sizes, exp.windows())
}

/// `sweep`: bounded k-means across cluster-size caps.
pub fn cmd_sweep(exp: &ExperimentConfig) -> Result<()> {
    let data = Dataset::load(exp)?;
    let points = sweep_points(&data, exp)?;
    ensure_dir(&exp.out_dir)?;
    let mut out = CsvOut::create(
        exp.out_dir.join("sweep.csv"),
        &[
            "max_size",
            "oos_ann_std",
            "estimation_error_pct",
            "mean_cluster_correlation",
            "top5_share",
        ],
    )?;
    for p in &points {
        out.row([
            p.max_size.to_string(),
            num(p.oos_ann_std),
            num(p.estimation_error_pct),
            opt(p.mean_cluster_correlation),
            opt(p.top5_share),
        ])?;
    }
    out.finish()
}

/// `diagnose`: per-rebalance cluster labels, correlation tables and share
/// profiles.
pub fn cmd_diagnose(exp: &ExperimentConfig) -> Result<()> {
    let data = Dataset::load(exp)?;
    let cfg = exp.seeded_strategy();
    if cfg.algorithm == Algorithm::SingleStage {
        return Err(Error::Config("diagnose needs a clustering strategy".into()));
    }
    let returns = data.period(exp.period)?;
    let result = run_backtest(&returns, &cfg, exp.windows(), data.sectors.as_ref())?;
    ensure_dir(&exp.out_dir)?;

    let mut clusters = CsvOut::create(
        exp.out_dir.join("clusters.csv"),
        &["window_index", "rebalance_date", "ticker", "cluster"],
    )?;
    let mut corr = CsvOut::create(
        exp.out_dir.join("correlation.csv"),
        &["window_index", "cluster_i", "cluster_j", "correlation"],
    )?;
    let mut shares = CsvOut::create(
        exp.out_dir.join("shares.csv"),
        &["window_index", "rank", "share"],
    )?;
    let mut top5 = CsvOut::create(
        exp.out_dir.join("top5.csv"),
        &["window_index", "rebalance_date", "top5_share"],
    )?;
    for rec in &result.records {
        let w = rec.window_index.to_string();
        let labels = rec.cluster_labels.clone().unwrap_or_default();
        for (ticker, l) in returns.tickers().iter().zip(&labels) {
            clusters.row([
                w.clone(),
                rec.rebalance_date.clone(),
                ticker.clone(),
                l.to_string(),
            ])?;
        }
        if let Some(table) = &rec.cluster_correlation {
            for (i, row) in table.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    corr.row([w.clone(), i.to_string(), j.to_string(), num(*v)])?;
                }
            }
        }
        let a = ClusterAssignment::new(labels, rec.cluster_sizes.len().max(1))?;
        for (rank, s) in cluster_shares(&a).iter().enumerate() {
            shares.row([w.clone(), (rank + 1).to_string(), num(*s)])?;
        }
        top5.row([w.clone(), rec.rebalance_date.clone(), opt(rec.top5_share())])?;
    }
    clusters.finish()?;
    corr.finish()?;
    shares.finish()?;
    top5.finish()
}

/// `synth`: write a seeded block-factor price panel and its sector file.
pub fn cmd_synth(model: &FactorModel, seed: u64, out_dir: &Path) -> Result<()> {
    let returns = model.generate(seed)?;
    let prices = prices_from_returns(&returns, synthetic_date(0))?;
    ensure_dir(out_dir)?;
    write_prices(&prices, out_dir.join("prices.csv"))?;
    let mut out = CsvOut::create(out_dir.join("sectors.csv"), &["ticker", "sector"])?;
    for (ticker, block) in returns.tickers().iter().zip(model.block_labels()) {
        out.row([ticker.clone(), format!("block_{block:02}")])?;
    }
    out.finish()
}

#[derive(Debug, Parser)]
#[command(
    name = "cluster-gmvp",
    version,
    about = "Clustering-based minimum variance portfolios"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Backtest one strategy against the baselines
    Run(CommonArgs),
    /// Evaluate a grid of algorithm × reduction × scaling combinations
    Grid(CommonArgs),
    /// Sweep the bounded k-means size cap
    Sweep(CommonArgs),
    /// Emit cluster labels, correlations and share profiles per rebalance
    Diagnose(CommonArgs),
    /// Generate a synthetic price panel and sector file
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub est_len: Option<usize>,
    #[arg(long)]
    pub hold_len: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Switches the strategy to bounded k-means with this cap
    #[arg(long)]
    pub max_size: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Print the effective configuration as JSON and exit
    #[arg(long)]
    pub dump_config: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 5)]
    pub per_block: usize,
    #[arg(long, default_value_t = 1000)]
    pub days: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.3)]
    pub within_corr: f64,
    #[arg(long, default_value_t = 0.012)]
    pub vol: f64,
    #[arg(long, default_value_t = 0.0003)]
    pub drift: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.est_len {
            cfg.est_len = v;
        }
        if let Some(v) = self.hold_len {
            cfg.hold_len = v;
        }
        if let Some(v) = self.k {
            cfg.strategy.k = v;
        }
        if let Some(v) = self.max_size {
            cfg.strategy.algorithm = Algorithm::BoundedKmeans { max_size: v };
        }
        if let Some(v) = self.repeats {
            cfg.repeats = v;
        }
        Ok(cfg)
    }
}

/// Exit code for an error: 2 for configuration and infeasibility, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_user_error() {
        2
    } else {
        1
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let (args, run): (&CommonArgs, fn(&ExperimentConfig) -> Result<()>) = match &cli.command {
        Command::Run(a) => (a, cmd_run),
        Command::Grid(a) => (a, cmd_grid),
        Command::Sweep(a) => (a, cmd_sweep),
        Command::Diagnose(a) => (a, cmd_diagnose),
        Command::Synth(a) => {
            let model = FactorModel {
                drift: a.drift,
                ..FactorModel::equicorrelated(a.blocks, a.per_block, a.days, a.within_corr, a.vol)
            };
            return cmd_synth(&model, a.seed, &a.out_dir);
        }
    };
    let cfg = args.resolve()?;
    if args.dump_config {
        // a closed pipe (e.g. `| head`) is not an error
        let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    run(&cfg)
}

/// Size the global work pool from `CLUSTER_GMVP_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v} is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_eighteen_cells() {
        let cells = GridSpec::default().cells(&StrategyConfig::default());
        assert_eq!(cells.len(), 18);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ExperimentConfig {
            sizes: vec![10, 20],
            sectors: Some("s.csv".into()),
            split_date: "2012-01-03".into(),
            ..ExperimentConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig = serde_json::from_str(
            r#"{"strategy": {"algorithm": {"method": "bounded_kmeans", "max_size": 75}}}"#,
        )
        .unwrap();
        assert_eq!(
            partial.strategy.algorithm,
            Algorithm::BoundedKmeans { max_size: 75 }
        );
        assert_eq!(partial.est_len, 252);
    }

    #[test]
    fn sizes_are_deduplicated() {
        assert_eq!(dedup_sizes(&[40, 10, 40, 20]), vec![10, 20, 40]);
    }

    #[test]
    fn overrides_apply() {
        let args = CommonArgs {
            config: None,
            seed: Some(9),
            out_dir: Some("x".into()),
            est_len: Some(100),
            hold_len: Some(20),
            k: Some(4),
            max_size: Some(12),
            repeats: None,
            dump_config: false,
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(
            cfg.windows(),
            WindowSpec {
                est_len: 100,
                hold_len: 20
            }
        );
        assert_eq!(cfg.strategy.k, 4);
        assert_eq!(
            cfg.strategy.algorithm,
            Algorithm::BoundedKmeans { max_size: 12 }
        );
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Infeasible("x".into())), 2);
        assert_eq!(exit_code(&Error::Config("x".into()).in_window(3)), 2);
        assert_eq!(exit_code(&Error::SingularCovariance("x".into())), 1);
    }
}
