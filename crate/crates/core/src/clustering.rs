//! Euclidean clustering of stocks: k-means, size-bounded k-means,
//! agglomerative hierarchical clustering and label partitions.

use std::collections::HashMap;

use nalgebra::{DMatrix, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::SectorMap;
use crate::preprocess::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    k: usize,
    sizes: Vec<usize>,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let mut sizes = vec![0; k];
        for &l in &labels {
            if l >= k {
                return Err(Error::invalid(format!("label {l} outside 0..{k}")));
            }
            sizes[l] += 1;
        }
        Ok(Self { labels, k, sizes })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_points(&self) -> usize {
        self.labels.len()
    }

    /// Point indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Within-cluster sum of squared distances to the cluster means.
    pub fn wcss(&self, x: &FeatureMatrix) -> f64 {
        let centroids = centroids_of(x.values(), &self.labels, self.k, None);
        wcss_against(x.values(), &self.labels, &centroids)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Ward,
    Complete,
    Average,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub k: usize,
    pub seed: u64,
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub max_size: Option<usize>,
    pub linkage: Linkage,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            k: 11,
            seed: 0,
            n_init: 10,
            max_iter: 300,
            tol: 1e-10,
            max_size: None,
            linkage: Linkage::Ward,
        }
    }
}

impl ClusteringConfig {
    fn check(&self, n: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.k > n {
            return Err(Error::invalid(format!("k = {} exceeds {n} points", self.k)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol must be non-negative"));
        }
        Ok(())
    }
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    x.row(i)
        .iter()
        .zip(c.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn centroids_of(
    x: &DMatrix<f64>,
    labels: &[usize],
    k: usize,
    previous: Option<&DMatrix<f64>>,
) -> DMatrix<f64> {
    let d = x.ncols();
    let mut sums = DMatrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        let mut row = sums.row_mut(l);
        row += x.row(i);
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            let mut row = sums.row_mut(c);
            row /= count as f64;
        } else if let Some(prev) = previous {
            // empty clusters keep their centroid
            sums.set_row(c, &prev.row(c));
        }
    }
    sums
}

fn wcss_against(x: &DMatrix<f64>, labels: &[usize], centroids: &DMatrix<f64>) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(x, i, centroids, l))
        .sum()
}

/// k-means++ seeding.
pub fn kmeans_plus_plus(x: &FeatureMatrix, k: usize, seed: u64) -> Result<DMatrix<f64>> {
    let values = x.values();
    let n = values.nrows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} outside 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = DMatrix::zeros(k, values.ncols());
    let first = rng.random_range(0..n);
    centroids.set_row(0, &values.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(values, i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.set_row(c, &values.row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(values, i, &centroids, c));
        }
    }
    Ok(centroids)
}

/// One Lloyd run from fixed initial centroids.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub labels: Vec<usize>,
    pub centroids: DMatrix<f64>,
    pub wcss: f64,
    pub iterations: usize,
    /// WCSS after each update step.
    pub wcss_trace: Vec<f64>,
    /// Largest cluster size after each assignment step.
    pub max_size_trace: Vec<usize>,
}

fn assign(x: &DMatrix<f64>, centroids: &DMatrix<f64>, max_size: Option<usize>) -> Vec<usize> {
    let n = x.nrows();
    let k = centroids.nrows();
    match max_size {
        None => (0..n)
            .map(|i| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for c in 0..k {
                    let d = sq_dist(x, i, centroids, c);
                    if d < best_d {
                        best = c;
                        best_d = d;
                    }
                }
                best
            })
            .collect(),
        Some(cap) => {
            let mut sizes = vec![0usize; k];
            let mut order: Vec<(f64, usize)> = Vec::with_capacity(k);
            (0..n)
                .map(|i| {
                    order.clear();
                    order.extend((0..k).map(|c| (sq_dist(x, i, centroids, c), c)));
                    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    let c = order
                        .iter()
                        .map(|&(_, c)| c)
                        .find(|&c| sizes[c] < cap)
                        .expect("capacity k*max_size >= N leaves a free centroid");
                    sizes[c] += 1;
                    c
                })
                .collect()
        }
    }
}

/// Lloyd iterations from `init`. With `max_size`, each assignment pass
/// visits points in index order and sends each to the nearest centroid that
/// still has room.
pub fn lloyd(
    x: &FeatureMatrix,
    init: &DMatrix<f64>,
    max_size: Option<usize>,
    max_iter: usize,
    tol: f64,
) -> Result<LloydRun> {
    let values = x.values();
    let (n, k) = (values.nrows(), init.nrows());
    if init.ncols() != values.ncols() || k == 0 {
        return Err(Error::invalid(
            "initial centroids do not match the features",
        ));
    }
    if let Some(cap) = max_size {
        if cap.checked_mul(k).is_none_or(|total| total < n) {
            return Err(Error::Infeasible(format!(
                "k·max_size < N ({k}·{cap} < {n})"
            )));
        }
    }
    let mut centroids = init.clone();
    let mut labels = Vec::new();
    let mut wcss_trace = Vec::new();
    let mut max_size_trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        labels = assign(values, &centroids, max_size);
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        max_size_trace.push(counts.iter().copied().max().unwrap_or(0));
        let updated = centroids_of(values, &labels, k, Some(&centroids));
        let shift = (0..k)
            .map(|c| (updated.row(c) - centroids.row(c)).norm())
            .fold(0.0, f64::max);
        centroids = updated;
        wcss_trace.push(wcss_against(values, &labels, &centroids));
        if shift <= tol {
            break;
        }
    }
    let wcss = *wcss_trace.last().unwrap_or(&0.0);
    Ok(LloydRun {
        labels,
        centroids,
        wcss,
        iterations,
        wcss_trace,
        max_size_trace,
    })
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed.wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn best_of_restarts(
    x: &FeatureMatrix,
    cfg: &ClusteringConfig,
    max_size: Option<usize>,
) -> Result<ClusterAssignment> {
    cfg.check(x.n_rows())?;
    let runs: Vec<Result<LloydRun>> = (0..cfg.n_init.max(1))
        .into_par_iter()
        .map(|r| {
            let init = kmeans_plus_plus(x, cfg.k, restart_seed(cfg.seed, r))?;
            lloyd(x, &init, max_size, cfg.max_iter, cfg.tol)
        })
        .collect();
    let mut best: Option<LloydRun> = None;
    for run in runs {
        let run = run?;
        // strict comparison keeps the lowest restart index on ties
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    ClusterAssignment::new(best.labels, cfg.k)
}

/// Lloyd's k-means with k-means++ seeding; best of `n_init` restarts by WCSS.
pub fn kmeans(x: &FeatureMatrix, cfg: &ClusteringConfig) -> Result<ClusterAssignment> {
    best_of_restarts(x, cfg, None)
}

/// k-means where no cluster may exceed `cfg.max_size` members.
pub fn bounded_kmeans(x: &FeatureMatrix, cfg: &ClusteringConfig) -> Result<ClusterAssignment> {
    let cap = cfg
        .max_size
        .ok_or_else(|| Error::invalid("bounded k-means requires max_size"))?;
    let n = x.n_rows();
    if cap.checked_mul(cfg.k).is_none_or(|total| total < n) {
        return Err(Error::Infeasible(format!(
            "k·max_size < N ({}·{cap} < {n})",
            cfg.k
        )));
    }
    best_of_restarts(x, cfg, Some(cap))
}

fn euclidean(a: RowDVector<f64>, b: RowDVector<f64>) -> f64 {
    (a - b).norm()
}

/// Agglomerative clustering cut at `cfg.k` clusters.
///
/// Ward merges on squared Euclidean distance with the Lance–Williams update;
/// the other linkages work on plain Euclidean distance. Equal merge costs go
/// to the lexicographically smallest cluster pair.
pub fn hierarchical(x: &FeatureMatrix, cfg: &ClusteringConfig) -> Result<ClusterAssignment> {
    let values = x.values();
    let n = values.nrows();
    cfg.check(n)?;
    let linkage = cfg.linkage;

    let mut dist = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(values.row(i).into_owned(), values.row(j).into_owned());
            let d = if linkage == Linkage::Ward { d * d } else { d };
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut parent: Vec<usize> = (0..n).collect();

    // nearest active partner with a larger index: (distance, index)
    let row_best = |a: usize, active: &[bool], dist: &DMatrix<f64>| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for b in (a + 1)..n {
            if active[b] && best.is_none_or(|(d, _)| dist[(a, b)] < d) {
                best = Some((dist[(a, b)], b));
            }
        }
        best
    };
    let mut nn: Vec<Option<(f64, usize)>> = (0..n).map(|a| row_best(a, &active, &dist)).collect();

    let mut clusters = n;
    while clusters > cfg.k {
        let mut pick: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            if !active[a] {
                continue;
            }
            if let Some((d, b)) = nn[a] {
                if pick.is_none_or(|(pd, _, _)| d < pd) {
                    pick = Some((d, a, b));
                }
            }
        }
        let (d_ij, i, j) = pick.expect("at least two active clusters");
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for m in 0..n {
            if !active[m] || m == i || m == j {
                continue;
            }
            let (dmi, dmj) = (dist[(m, i)], dist[(m, j)]);
            let updated = match linkage {
                Linkage::Single => dmi.min(dmj),
                Linkage::Complete => dmi.max(dmj),
                Linkage::Average => (ni * dmi + nj * dmj) / (ni + nj),
                Linkage::Ward => {
                    let nm = size[m] as f64;
                    ((ni + nm) * dmi + (nj + nm) * dmj - nm * d_ij) / (ni + nj + nm)
                }
            };
            dist[(m, i)] = updated;
            dist[(i, m)] = updated;
        }
        active[j] = false;
        size[i] += size[j];
        parent[j] = i;
        clusters -= 1;

        for a in 0..n {
            if !active[a] {
                continue;
            }
            let stale = match nn[a] {
                Some((_, b)) => a == i || b == i || b == j,
                None => a == i,
            };
            if stale {
                nn[a] = row_best(a, &active, &dist);
            } else if a < i {
                // the merged cluster may now be closer
                let d = dist[(a, i)];
                if let Some((best_d, best_b)) = nn[a] {
                    if d < best_d || (d == best_d && i < best_b) {
                        nn[a] = Some((d, i));
                    }
                }
            }
        }
    }

    let root = |mut p: usize| {
        while parent[p] != p {
            p = parent[p];
        }
        p
    };
    let mut relabel: HashMap<usize, usize> = HashMap::new();
    let labels = (0..n)
        .map(|i| {
            let r = root(i);
            let next = relabel.len();
            *relabel.entry(r).or_insert(next)
        })
        .collect();
    ClusterAssignment::new(labels, cfg.k)
}

/// One cluster per distinct label, numbered in order of first appearance.
pub fn partition_by_label(
    sectors: &SectorMap,
    tickers: &[String],
) -> Result<(ClusterAssignment, Vec<String>)> {
    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(tickers.len());
    for t in tickers {
        let sector = sectors
            .get(t)
            .ok_or_else(|| Error::invalid(format!("ticker {t} missing from sector map")))?;
        let next = index.len();
        let l = *index.entry(sector).or_insert_with(|| {
            names.push(sector.to_owned());
            next
        });
        labels.push(l);
    }
    let assignment = ClusterAssignment::new(labels, names.len().max(1))?;
    Ok((assignment, names))
}

/// Cluster size fractions, largest first.
pub fn cluster_shares(a: &ClusterAssignment) -> Vec<f64> {
    let n = a.n_points() as f64;
    let mut shares: Vec<f64> = a.sizes().iter().map(|&s| s as f64 / n).collect();
    shares.sort_by(|a, b| b.total_cmp(a));
    shares
}

/// Combined share of the `m` largest clusters.
pub fn top_m_share(a: &ClusterAssignment, m: usize) -> Result<f64> {
    if m == 0 || m > a.k() {
        return Err(Error::invalid(format!("m = {m} outside 1..={}", a.k())));
    }
    let mut sizes = a.sizes().to_vec();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    Ok(sizes[..m].iter().sum::<usize>() as f64 / a.n_points() as f64)
}
