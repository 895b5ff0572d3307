//! One-dimensional k-means on peak frequency.
//!
//! Defective points are the members of the lower-frequency cluster, which is
//! always reported as cluster 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::defect::DefectClass;
use crate::error::{Error, Result};
use crate::mapping::Zone;
use crate::spectral::PeakReading;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves more than this (kHz).
    pub tol: f64,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 2,
            seed: 0,
            max_iter: 100,
            tol: 1e-6,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<f64>,
    /// Within-cluster sum of squares, kHz².
    pub cost: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Fewer distinct values than clusters.
    pub degenerate: bool,
    /// Cost after each Lloyd iteration of the winning restart.
    pub cost_history: Vec<f64>,
}

impl ClusterResult {
    /// Recomputes Σ_k Σ_{x∈C_k} (x − μ_k)² from labels and centroids.
    pub fn recompute_cost(&self, values: &[f64]) -> f64 {
        within_ss(values, &self.labels, &self.centroids)
    }
}

fn within_ss(values: &[f64], labels: &[usize], centroids: &[f64]) -> f64 {
    values
        .iter()
        .zip(labels)
        .map(|(x, &l)| (x - centroids[l]).powi(2))
        .sum()
}

fn nearest(x: f64, centroids: &[f64]) -> usize {
    let mut best = 0;
    for (j, c) in centroids.iter().enumerate().skip(1) {
        if (x - c).abs() < (x - centroids[best]).abs() {
            best = j;
        }
    }
    best
}

fn potential(values: &[f64], centroids: &[f64]) -> f64 {
    values
        .iter()
        .map(|&x| {
            centroids
                .iter()
                .map(|c| (x - c).powi(2))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Greedy k-means++: each new center is the best of a few D²-weighted draws.
fn kmeans_pp_init(values: &[f64], first: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = vec![values[first]];
    while centroids.len() < k {
        let weights: Vec<f64> = values
            .iter()
            .map(|&x| {
                centroids
                    .iter()
                    .map(|c| (x - c).powi(2))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut best: Option<(f64, usize)> = None;
        for _ in 0..trials {
            let pick = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut idx = values.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if target < *w {
                        idx = i;
                        break;
                    }
                    target -= w;
                }
                idx
            } else {
                rng.random_range(0..values.len())
            };
            let mut cand = centroids.clone();
            cand.push(values[pick]);
            let pot = potential(values, &cand);
            if best.is_none_or(|(p, _)| pot < p) {
                best = Some((pot, pick));
            }
        }
        centroids.push(values[best.expect("at least one trial").1]);
    }
    centroids
}

/// Plain Lloyd iterations from the given centroids.
pub fn lloyd(values: &[f64], init: Vec<f64>, max_iter: usize, tol: f64) -> ClusterResult {
    let k = init.len();
    let mut centroids = init;
    let mut labels = vec![0; values.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        for (l, &x) in labels.iter_mut().zip(values) {
            *l = nearest(x, &centroids);
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&l, &x) in labels.iter().zip(values) {
            sums[l] += x;
            counts[l] += 1;
        }
        let updated: Vec<f64> = (0..k)
            .map(|j| {
                if counts[j] > 0 {
                    sums[j] / counts[j] as f64
                } else {
                    centroids[j]
                }
            })
            .collect();
        let shift = updated
            .iter()
            .zip(&centroids)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        centroids = updated;
        history.push(within_ss(values, &labels, &centroids));
        if shift < tol {
            break;
        }
    }
    ClusterResult {
        cost: within_ss(values, &labels, &centroids),
        labels,
        centroids,
        iterations,
        seed: 0,
        degenerate: false,
        cost_history: history,
    }
}

/// k-means with default iteration limits and restarts.
pub fn kmeans(
    values: &[f64],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterResult> {
    kmeans_with(
        values,
        &KMeansConfig {
            k,
            seed,
            max_iter,
            tol,
            ..KMeansConfig::default()
        },
    )
}

/// k-means++ seeding, Lloyd refinement, best of `restarts` by cost.
///
/// Values are clustered in sorted order and centroids are returned ascending,
/// so the result does not depend on input order.
pub fn kmeans_with(values: &[f64], cfg: &KMeansConfig) -> Result<ClusterResult> {
    let k = cfg.k;
    if k == 0 || values.len() < k {
        return Err(Error::InvalidInput(format!(
            "k-means needs at least k = {k} values (got {}) and k >= 1",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "k-means input contains non-finite values".into(),
        ));
    }

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let distinct = 1 + sorted.windows(2).filter(|w| w[1] != w[0]).count();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<ClusterResult> = None;
    // Restarts begin from distinct first centers while any remain.
    let mut unused: Vec<usize> = (0..sorted.len()).collect();
    for _ in 0..cfg.restarts.max(1) {
        if unused.is_empty() {
            unused = (0..sorted.len()).collect();
        }
        let first = unused.swap_remove(rng.random_range(0..unused.len()));
        let init = kmeans_pp_init(&sorted, first, k, &mut rng);
        let run = refine(&sorted, lloyd(&sorted, init, cfg.max_iter, cfg.tol), cfg);
        if best.as_ref().is_none_or(|b| run.cost < b.cost) {
            best = Some(run);
        }
    }
    let mut best = sort_centroids(best.expect("at least one restart"));

    let mut labels = vec![0; values.len()];
    for (pos, &orig) in order.iter().enumerate() {
        labels[orig] = best.labels[pos];
    }
    best.labels = labels;
    best.seed = cfg.seed;
    best.degenerate = distinct < k;
    Ok(best)
}

/// Single-point transfers (Hartigan): moves a point whenever that lowers the
/// total cost, then re-runs Lloyd. Stops when no transfer helps.
fn refine(values: &[f64], mut r: ClusterResult, cfg: &KMeansConfig) -> ClusterResult {
    let k = r.centroids.len();
    for _ in 0..cfg.max_iter.max(1) {
        let mut counts = vec![0usize; k];
        let mut sums = vec![0.0; k];
        for (&l, &x) in r.labels.iter().zip(values) {
            counts[l] += 1;
            sums[l] += x;
        }
        let mut moved = false;
        for i in 0..values.len() {
            let (x, a) = (values[i], r.labels[i]);
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let remove_gain = na / (na - 1.0) * (x - sums[a] / na).powi(2);
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let add_cost = if counts[b] == 0 {
                    0.0
                } else {
                    nb / (nb + 1.0) * (x - sums[b] / nb).powi(2)
                };
                if add_cost < remove_gain * (1.0 - 1e-12) && best.is_none_or(|(_, c)| add_cost < c)
                {
                    best = Some((b, add_cost));
                }
            }
            if let Some((b, _)) = best {
                counts[a] -= 1;
                sums[a] -= x;
                counts[b] += 1;
                sums[b] += x;
                r.labels[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        let centroids: Vec<f64> = (0..k)
            .map(|j| {
                if counts[j] > 0 {
                    sums[j] / counts[j] as f64
                } else {
                    r.centroids[j]
                }
            })
            .collect();
        r.cost_history
            .push(within_ss(values, &r.labels, &centroids));
        let next = lloyd(values, centroids, cfg.max_iter, cfg.tol);
        r.iterations += next.iterations;
        r.cost_history.extend(next.cost_history);
        r.labels = next.labels;
        r.centroids = next.centroids;
        r.cost = next.cost;
    }
    r
}

fn sort_centroids(mut r: ClusterResult) -> ClusterResult {
    let mut perm: Vec<usize> = (0..r.centroids.len()).collect();
    perm.sort_by(|&a, &b| r.centroids[a].total_cmp(&r.centroids[b]).then(a.cmp(&b)));
    let mut new_label = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        new_label[old] = new;
    }
    r.centroids = perm.iter().map(|&old| r.centroids[old]).collect();
    for l in &mut r.labels {
        *l = new_label[*l];
    }
    r
}

/// Puts the lower-frequency cluster at index 0. Cost is unchanged.
pub fn relabel_defective(r: ClusterResult) -> Result<ClusterResult> {
    if r.centroids.len() != 2 {
        return Err(Error::UnsupportedK(r.centroids.len()));
    }
    Ok(sort_centroids(r))
}

/// Outcome of clustering one zone (or a whole deck).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneClusters {
    pub class: Option<DefectClass>,
    pub x_lo_in: f64,
    pub x_hi_in: f64,
    /// Cluster 0 members.
    pub defective: Vec<PeakReading>,
    pub intact_count: usize,
    /// Readings left out because of QA flags.
    pub excluded_count: usize,
    pub centroids: Vec<f64>,
    pub cost: f64,
    pub degenerate: bool,
}

/// Two-means on the QA-clean readings; returns the low-frequency cluster.
pub fn cluster_readings(
    readings: &[PeakReading],
    seed: u64,
    label: &str,
) -> Result<(Vec<PeakReading>, usize, ClusterResult)> {
    let usable: Vec<&PeakReading> = readings.iter().filter(|p| p.qa.is_ok()).collect();
    if usable.len() < 2 {
        return Err(Error::ZoneTooSmall {
            zone: label.to_string(),
            count: usable.len(),
        });
    }
    let values: Vec<f64> = usable.iter().map(|p| p.f_peak_khz).collect();
    let result = relabel_defective(kmeans_with(
        &values,
        &KMeansConfig {
            seed,
            ..KMeansConfig::default()
        },
    )?)?;
    let defective: Vec<PeakReading> = if result.degenerate {
        log::warn!("{label}: all usable readings are equal; no defective cluster");
        Vec::new()
    } else {
        usable
            .iter()
            .zip(&result.labels)
            .filter(|(_, &l)| l == 0)
            .map(|(p, _)| (*p).clone())
            .collect()
    };
    let intact = usable.len() - defective.len();
    Ok((defective, intact, result))
}

pub fn cluster_zone(z: &Zone, seed: u64) -> Result<ZoneClusters> {
    let (defective, intact_count, result) =
        cluster_readings(&z.readings, seed, &z.class.to_string())?;
    Ok(ZoneClusters {
        class: Some(z.class),
        x_lo_in: z.x_lo_in,
        x_hi_in: z.x_hi_in,
        excluded_count: z.readings.len() - defective.len() - intact_count,
        defective,
        intact_count,
        centroids: result.centroids,
        cost: result.cost,
        degenerate: result.degenerate,
    })
}

/// Clusters a whole deck at once (no zones).
pub fn cluster_global(readings: &[PeakReading], width_in: f64, seed: u64) -> Result<ZoneClusters> {
    let (defective, intact_count, result) = cluster_readings(readings, seed, "global")?;
    Ok(ZoneClusters {
        class: None,
        x_lo_in: 0.0,
        x_hi_in: width_in,
        excluded_count: readings.len() - defective.len() - intact_count,
        defective,
        intact_count,
        centroids: result.centroids,
        cost: result.cost,
        degenerate: result.degenerate,
    })
}
