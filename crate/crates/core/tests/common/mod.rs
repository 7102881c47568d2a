#![allow(dead_code)]

use dsg_core::{ClusterAssignment, DistanceStats, FeatureSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i:04}")).collect()
}

/// Gaussian rows, L2-normalized.
pub fn random_features(n: usize, dim: usize, seed: u64) -> FeatureSet {
    let mut r = rng(seed);
    FeatureSet::new(ids(n), dim, gaussian(&mut r, n * dim)).unwrap().normalized()
}

/// Rows drawn around `k` shared directions so that the distance spread
/// straddles the thresholds.
pub fn clustered_features(n: usize, dim: usize, k: usize, noise: f64, seed: u64) -> FeatureSet {
    let mut r = rng(seed);
    let centers = gaussian(&mut r, k * dim);
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        let c = &centers[(i % k) * dim..(i % k + 1) * dim];
        data.extend(c.iter().map(|v| v + noise * r.sample::<f64, _>(StandardNormal)));
    }
    FeatureSet::new(ids(n), dim, data).unwrap().normalized()
}

pub fn random_clusters(features: &FeatureSet, k: usize, seed: u64) -> ClusterAssignment {
    let mut r = rng(seed);
    let mut labels: Vec<usize> = (0..features.len()).map(|_| r.random_range(0..k)).collect();
    // every cluster non-empty
    for (c, l) in labels.iter_mut().take(k).enumerate() {
        *l = c;
    }
    ClusterAssignment::from_labels(features, labels).unwrap()
}

pub fn stats(d_l: f64, t: f64, d_r: f64) -> DistanceStats {
    DistanceStats::from_thresholds(d_l, t, d_r).unwrap()
}

/// Textbook cosine distance, no cached norms.
pub fn naive_distance(x: &[f64], y: &[f64]) -> f64 {
    let mut xy = 0.0;
    let mut xx = 0.0;
    let mut yy = 0.0;
    for k in 0..x.len() {
        xy += x[k] * y[k];
        xx += x[k] * x[k];
        yy += y[k] * y[k];
    }
    (1.0 - xy / (xx.sqrt() * yy.sqrt())).clamp(0.0, 2.0)
}

pub fn naive_label(d: f64, t: f64) -> i8 {
    if d <= t {
        1
    } else {
        -1
    }
}

pub fn naive_smooth(d: f64, d_l: f64, t: f64, d_r: f64) -> f64 {
    if d > d_l && d <= t {
        ((t - d) / (t - d_l)).powi(2)
    } else if d > t && d < d_r {
        ((d - t) / (d_r - t)).powi(2)
    } else {
        1.0
    }
}
