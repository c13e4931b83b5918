//! Fuzzy c-means over scalar intensities with fuzzifier 2.
//!
//! Memberships: `m_k(x) = 1 / Σ_j (d_k(x)² / d_j(x)²)` with `d_k(x) = |x - c_k|`.
//! Centroids:   `c_k = Σ_x m_k(x)² x / Σ_x m_k(x)²`.
//! Objective:   `L = Σ_k Σ_x m_k(x)² (x - c_k)²`.
//!
//! A pixel sitting exactly on a centroid gets a crisp membership for that
//! cluster, which is the limit of the membership formula.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Membership exponent. Fixed; the update formulas below are specialised to it.
pub const FUZZIFIER: f64 = 2.0;

const PARALLEL_MIN_LEN: usize = 16 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FcmConfig {
    pub cluster_count: usize,
    /// Stop once no centroid moves by this much or more between sweeps.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Strictly increasing starting centroids. When absent, the run starts
    /// from evenly spaced quantiles of the data and again from evenly spaced
    /// points over the data range, and the lower final objective is kept.
    pub initial_centroids: Option<Vec<f64>>,
}

impl Default for FcmConfig {
    fn default() -> Self {
        Self {
            cluster_count: 2,
            tolerance: 1e-4,
            max_iterations: 300,
            initial_centroids: None,
        }
    }
}

impl FcmConfig {
    pub fn with_clusters(cluster_count: usize) -> Self {
        Self {
            cluster_count,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cluster_count < 2 {
            return Err(Error::InvalidConfig(format!(
                "cluster_count must be at least 2, got {}",
                self.cluster_count
            )));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be non-negative, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        if let Some(init) = &self.initial_centroids {
            if init.len() != self.cluster_count {
                return Err(Error::InvalidConfig(format!(
                    "expected {} initial centroids, got {}",
                    self.cluster_count,
                    init.len()
                )));
            }
            if init.iter().any(|c| !c.is_finite()) || init.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidConfig(
                    "initial centroids must be finite and strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Per-pixel membership rows, stored flat: row `i` holds the `clusters`
/// memberships of pixel `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Memberships {
    clusters: usize,
    values: Vec<f64>,
}

impl Memberships {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let clusters = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * clusters);
        for row in rows {
            if row.len() != clusters {
                return Err(Error::RaggedRows {
                    expected: clusters,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(Self { clusters, values })
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.clusters).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.values[pixel * self.clusters..(pixel + 1) * self.clusters]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.clusters.max(1))
    }

    /// Membership of every pixel in `cluster`.
    pub fn column(&self, cluster: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[cluster])
    }

    fn permute_columns(&mut self, order: &[usize]) {
        let mut scratch = vec![0.0; self.clusters];
        for row in self.values.chunks_exact_mut(self.clusters) {
            for (dst, &src) in scratch.iter_mut().zip(order) {
                *dst = row[src];
            }
            row.copy_from_slice(&scratch);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcmState {
    /// Ascending.
    pub centroids: Vec<f64>,
    pub memberships: Memberships,
    /// Objective after initialisation and after every accepted sweep.
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
}

impl FcmState {
    pub fn final_objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("trace holds the starting objective")
    }

    /// Index of the cluster with the largest membership for each pixel;
    /// ties go to the lower cluster index.
    pub fn hard_assignments(&self) -> Vec<usize> {
        self.memberships
            .rows()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &m)| {
                        if m > best.1 {
                            (k, m)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }
}

fn check_centroids(centroids: &[f64]) -> Result<()> {
    if centroids.len() < 2 {
        return Err(Error::TooFewCentroids(centroids.len()));
    }
    let mut sorted = centroids.to_vec();
    sorted.sort_by(f64::total_cmp);
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateCentroids(w[0]));
    }
    Ok(())
}

fn membership_row(x: f64, centroids: &[f64], row: &mut [f64]) {
    let mut stack = [0.0f64; 8];
    let mut heap = Vec::new();
    let dist2: &mut [f64] = if centroids.len() <= stack.len() {
        &mut stack[..centroids.len()]
    } else {
        heap.resize(centroids.len(), 0.0);
        &mut heap
    };
    for (d2, &c) in dist2.iter_mut().zip(centroids) {
        *d2 = (x - c) * (x - c);
    }
    if let Some(hit) = dist2.iter().position(|&d2| d2 == 0.0) {
        row.iter_mut().for_each(|m| *m = 0.0);
        row[hit] = 1.0;
        return;
    }
    for (m, &dk) in row.iter_mut().zip(dist2.iter()) {
        let ratio_sum: f64 = dist2.iter().map(|&dj| dk / dj).sum();
        *m = 1.0 / ratio_sum;
    }
}

/// Fuzzifier-2 memberships of every intensity against `centroids`.
pub fn compute_memberships(intensities: &[f64], centroids: &[f64]) -> Result<Memberships> {
    check_centroids(centroids)?;
    let c = centroids.len();
    let mut values = vec![0.0; intensities.len() * c];
    if intensities.len() >= PARALLEL_MIN_LEN {
        values
            .par_chunks_mut(c)
            .zip(intensities.par_iter())
            .for_each(|(row, &x)| membership_row(x, centroids, row));
    } else {
        for (row, &x) in values.chunks_exact_mut(c).zip(intensities) {
            membership_row(x, centroids, row);
        }
    }
    Ok(Memberships {
        clusters: c,
        values,
    })
}

/// Squared-membership weighted mean of the intensities, one per cluster, in
/// cluster order (no reordering).
pub fn update_centroids(intensities: &[f64], memberships: &Memberships) -> Result<Vec<f64>> {
    if memberships.len() != intensities.len() {
        return Err(Error::DimensionMismatch {
            expected: (intensities.len(), 1),
            found: (memberships.len(), 1),
        });
    }
    let c = memberships.clusters();
    let mut num = vec![0.0; c];
    let mut den = vec![0.0; c];
    for (row, &x) in memberships.rows().zip(intensities) {
        for k in 0..c {
            let w = row[k] * row[k];
            num[k] += w * x;
            den[k] += w;
        }
    }
    num.iter()
        .zip(&den)
        .enumerate()
        .map(|(k, (&n, &d))| {
            if d > 0.0 {
                Ok(n / d)
            } else {
                Err(Error::DegenerateCluster { cluster: k })
            }
        })
        .collect()
}

pub fn fcm_objective(intensities: &[f64], memberships: &Memberships, centroids: &[f64]) -> f64 {
    memberships
        .rows()
        .zip(intensities)
        .map(|(row, &x)| {
            row.iter()
                .zip(centroids)
                .map(|(&m, &c)| m * m * (x - c) * (x - c))
                .sum::<f64>()
        })
        .sum()
}

fn distinct_sorted(intensities: &[f64]) -> Vec<f64> {
    let mut v = intensities.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// `C` evenly spaced nearest-rank quantiles at levels `(k + 1/2) / C`, or
/// `None` when they coincide (heavily tied data).
fn quantile_centroids(sorted: &[f64], clusters: usize) -> Option<Vec<f64>> {
    let n = sorted.len();
    let q: Vec<f64> = (0..clusters)
        .map(|k| sorted[(((2 * k + 1) * n) / (2 * clusters)).min(n - 1)])
        .collect();
    q.windows(2).all(|w| w[0] < w[1]).then_some(q)
}

/// `C` points evenly spaced over `[min, max]` at `(k + 1/2) / C`.
fn range_centroids(sorted: &[f64], clusters: usize) -> Vec<f64> {
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    (0..clusters)
        .map(|k| lo + (hi - lo) * (2 * k + 1) as f64 / (2 * clusters) as f64)
        .collect()
}

/// Deterministic starting points: the quantile start (when its centroids are
/// distinct) followed by the range start.
fn default_starts(intensities: &[f64], clusters: usize) -> Vec<Vec<f64>> {
    let mut sorted = intensities.to_vec();
    sorted.sort_by(f64::total_cmp);
    let range = range_centroids(&sorted, clusters);
    match quantile_centroids(&sorted, clusters) {
        Some(q) if q != range => vec![q, range],
        _ => vec![range],
    }
}

fn at_iteration<T>(iteration: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::DegenerateIteration {
        iteration,
        source: Box::new(e),
    })
}

/// Alternating fuzzy c-means until the largest centroid shift drops below
/// `config.tolerance` or `config.max_iterations` sweeps have run.
///
/// A sweep that would raise the objective (possible only through rounding
/// once converged) is rejected and ends the run, so the recorded trace is
/// non-increasing. Without given initial centroids the data is clustered
/// from two deterministic starts and the run with the lower final objective
/// is returned; this keeps a small, distant population from being absorbed
/// when the quantile start lands both centroids inside one large mode.
pub fn fcm_cluster(intensities: &[f64], config: &FcmConfig) -> Result<FcmState> {
    config.validate()?;
    if intensities.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("intensities must be finite".into()));
    }
    let distinct = distinct_sorted(intensities).len();
    if distinct < config.cluster_count {
        return Err(Error::InsufficientDistinctValues {
            required: config.cluster_count,
            found: distinct,
        });
    }

    let starts = match &config.initial_centroids {
        Some(init) => vec![init.clone()],
        None => default_starts(intensities, config.cluster_count),
    };
    // keep the run that ends lowest; the earlier start wins ties
    let mut best: Option<Result<FcmState>> = None;
    for start in starts {
        let run = iterate(intensities, start, config);
        best = match (best, run) {
            (None, run) => Some(run),
            (Some(Err(_)), Ok(run)) => Some(Ok(run)),
            (Some(Ok(b)), Ok(run)) if run.final_objective() < b.final_objective() => Some(Ok(run)),
            (keep, _) => keep,
        };
    }
    let FcmState {
        mut centroids,
        mut memberships,
        objective_trace,
        iterations_run,
    } = best.expect("at least one start")?;

    let mut order: Vec<usize> = (0..centroids.len()).collect();
    order.sort_by(|&a, &b| centroids[a].total_cmp(&centroids[b]));
    if order.iter().enumerate().any(|(i, &k)| i != k) {
        centroids = order.iter().map(|&k| centroids[k]).collect();
        memberships.permute_columns(&order);
    }

    Ok(FcmState {
        centroids,
        memberships,
        objective_trace,
        iterations_run,
    })
}

fn iterate(intensities: &[f64], mut centroids: Vec<f64>, config: &FcmConfig) -> Result<FcmState> {
    let mut memberships = at_iteration(0, compute_memberships(intensities, &centroids))?;
    let mut objective = fcm_objective(intensities, &memberships, &centroids);
    let mut trace = vec![objective];
    let mut iterations_run = 0;

    for iteration in 1..=config.max_iterations {
        let next = at_iteration(iteration, update_centroids(intensities, &memberships))?;
        let next_memberships = at_iteration(iteration, compute_memberships(intensities, &next))?;
        let next_objective = fcm_objective(intensities, &next_memberships, &next);
        if next_objective > objective {
            break;
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        centroids = next;
        memberships = next_memberships;
        objective = next_objective;
        trace.push(objective);
        iterations_run = iteration;
        if shift < config.tolerance {
            break;
        }
    }

    Ok(FcmState {
        centroids,
        memberships,
        objective_trace: trace,
        iterations_run,
    })
}
