//! Lloyd's K-means with k-means++ seeding, on squared Euclidean distance.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{write_file, FeatureSet};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 70;
pub const DEFAULT_MAX_ITERS: usize = 300;
pub const DEFAULT_RESTARTS: usize = 5;

/// Cluster label per point plus the centroids they were assigned to.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub dim: usize,
    pub labels: Vec<usize>,
    /// Row-major `k x dim`.
    pub centroids: Vec<f64>,
    pub inertia: f64,
    /// Inertia after every assignment step, starting with the one against the seeds.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Rebuilds an assignment from stored labels: centroids are the member means.
    pub fn from_labels(features: &FeatureSet, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != features.len() {
            return Err(Error::Validation(format!(
                "{} cluster labels for {} feature rows",
                labels.len(),
                features.len()
            )));
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let counts = member_counts(&labels, k);
        if let Some(c) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Validation(format!("cluster {c} has no members")));
        }
        let centroids = member_means(features, &labels, k);
        let inertia = inertia(features, &labels, &centroids);
        Ok(Self {
            k,
            dim: features.dim(),
            labels,
            centroids,
            inertia,
            inertia_history: vec![inertia],
            iterations: 0,
        })
    }
}

pub(crate) fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters `features` into `k` groups; deterministic for a given seed.
pub fn kmeans(features: &FeatureSet, k: usize, seed: u64, max_iters: usize) -> Result<ClusterAssignment> {
    let n = features.len();
    if k < 2 || k > n {
        return Err(Error::Domain(format!("k must satisfy 2 <= k <= n = {n}, got {k}")));
    }
    let dim = features.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(features, k, &mut rng);

    let (mut labels, mut dists) = assign(features, &centroids, k);
    let mut history = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        repair_empty_clusters(&mut labels, &mut dists, k);
        centroids = member_means(features, &labels, k);
        let (next, next_dists) = assign(features, &centroids, k);
        history.push(next_dists.iter().sum());
        let converged = next == labels;
        labels = next;
        dists = next_dists;
        if converged {
            break;
        }
    }
    if member_counts(&labels, k).contains(&0) {
        repair_empty_clusters(&mut labels, &mut dists, k);
        centroids = member_means(features, &labels, k);
    }
    let inertia = inertia(features, &labels, &centroids);
    Ok(ClusterAssignment { k, dim, labels, centroids, inertia, inertia_history: history, iterations })
}

/// Runs [`kmeans`] `restarts` times and keeps the lowest final inertia
/// (earliest run on ties). Run 0 uses `seed` itself, so one restart is a plain
/// [`kmeans`] call; later seeds are drawn from a generator seeded by `seed`.
pub fn kmeans_best_of(
    features: &FeatureSet,
    k: usize,
    seed: u64,
    max_iters: usize,
    restarts: usize,
) -> Result<ClusterAssignment> {
    if restarts == 0 {
        return Err(Error::Domain("restarts must be at least 1".into()));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut best = kmeans(features, k, seed, max_iters)?;
    for _ in 1..restarts {
        let run = kmeans(features, k, seeds.random(), max_iters)?;
        if run.inertia < best.inertia {
            best = run;
        }
    }
    Ok(best)
}

/// Greedy k-means++: each step draws `2 + ln k` candidates by squared distance
/// to the nearest chosen center and keeps the one that lowers the total most.
fn plus_plus_init(features: &FeatureSet, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = features.len();
    let trials = 2 + (k as f64).ln() as usize;
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut nearest = distances_to(features, features.row(chosen[0]));
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        if total <= 0.0 {
            // every remaining point duplicates a center
            let next = (0..n).find(|i| !chosen.contains(i)).unwrap();
            chosen.push(next);
            continue;
        }
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let candidate = sample_by_weight(&nearest, rng.random::<f64>() * total);
            let updated: Vec<f64> = distances_to(features, features.row(candidate))
                .into_iter()
                .zip(&nearest)
                .map(|(d, &old)| d.min(old))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.1) {
                best = Some((candidate, potential, updated));
            }
        }
        let (next, _, updated) = best.unwrap();
        chosen.push(next);
        nearest = updated;
    }
    chosen.iter().flat_map(|&i| features.row(i).iter().copied()).collect()
}

fn distances_to(features: &FeatureSet, center: &[f64]) -> Vec<f64> {
    features.data().par_chunks_exact(features.dim()).map(|row| squared_euclidean(row, center)).collect()
}

/// First index whose cumulative weight exceeds `target`, skipping zero weights.
fn sample_by_weight(weights: &[f64], target: f64) -> usize {
    let mut acc = 0.0;
    weights
        .iter()
        .position(|&w| {
            acc += w;
            w > 0.0 && acc > target
        })
        .unwrap_or_else(|| weights.iter().rposition(|&w| w > 0.0).unwrap())
}

/// Nearest centroid per point (lowest index on ties) and its squared distance.
fn assign(features: &FeatureSet, centroids: &[f64], k: usize) -> (Vec<usize>, Vec<f64>) {
    let dim = features.dim();
    features
        .data()
        .par_chunks_exact(dim)
        .map(|row| {
            let mut best = (0, f64::INFINITY);
            for c in 0..k {
                let d = squared_euclidean(row, &centroids[c * dim..(c + 1) * dim]);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

fn member_counts(labels: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    counts
}

fn member_means(features: &FeatureSet, labels: &[usize], k: usize) -> Vec<f64> {
    let dim = features.dim();
    let mut sums = vec![0.0; k * dim];
    let counts = member_counts(labels, k);
    for (row, &l) in features.rows().zip(labels) {
        sums[l * dim..(l + 1) * dim].iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            let inv = 1.0 / count as f64;
            sums[c * dim..(c + 1) * dim].iter_mut().for_each(|s| *s *= inv);
        }
    }
    sums
}

/// Gives each empty cluster the point farthest from its own centroid, taken
/// from a cluster that can spare it.
fn repair_empty_clusters(labels: &mut [usize], dists: &mut [f64], k: usize) {
    let mut counts = member_counts(labels, k);
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let donor = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            });
        let Some(i) = donor else { break };
        counts[labels[i]] -= 1;
        counts[empty] += 1;
        labels[i] = empty;
        dists[i] = 0.0;
    }
}

fn inertia(features: &FeatureSet, labels: &[usize], centroids: &[f64]) -> f64 {
    let dim = features.dim();
    features
        .rows()
        .zip(labels)
        .map(|(row, &l)| squared_euclidean(row, &centroids[l * dim..(l + 1) * dim]))
        .sum()
}

/// Writes `id,cluster` rows.
pub fn save_cluster_labels(ids: &[String], labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Validation(e.to_string());
    writer.write_record(["id", "cluster"]).map_err(csv_err)?;
    for (id, label) in ids.iter().zip(labels) {
        writer.write_record([id.as_str(), &label.to_string()]).map_err(csv_err)?;
    }
    let buf = writer.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    write_file(path.as_ref(), &buf)
}

/// Reads an `id,cluster` CSV and aligns it to `ids`.
pub fn load_cluster_labels(path: impl AsRef<Path>, ids: &[String]) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Validation(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?;
    if headers.len() != 2 || &headers[0] != "id" || &headers[1] != "cluster" {
        return Err(bad("cluster CSV header must be `id,cluster`".into()));
    }
    let mut by_id = std::collections::HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let label: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad cluster label {:?}", &record[1])))?;
        if by_id.insert(record[0].to_string(), label).is_some() {
            return Err(bad(format!("duplicate id {:?}", &record[0])));
        }
    }
    ids.iter()
        .map(|id| by_id.get(id).copied().ok_or_else(|| bad(format!("no cluster for id {id:?}"))))
        .collect()
}
