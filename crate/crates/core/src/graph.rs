//! Cosine-distance pseudo-labels and smooth confidence weights.
//!
//! Pairs closer than the threshold `t` are pseudo-similar (`+1`), the rest
//! pseudo-dissimilar (`-1`). Each pair also gets a confidence weight in
//! `[0, 1]` that is 1 outside `(d_l, d_r)` and falls quadratically to 0 as the
//! distance approaches `t`. The thresholds `d_l`, `d_r` come from fitting two
//! half-normal humps to the distance histogram.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSet;
use crate::error::{Error, Result};

pub const DEFAULT_T: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 2.0;
pub const DEFAULT_BETA: f64 = 2.0;
pub const DEFAULT_MAX_PAIRS: usize = 10_000_000;
/// Largest n for which dense n x n matrices are built.
pub const MATERIALIZATION_CAP: usize = 20_000;
/// Minimum number of distances accepted by [`fit_distance_stats`].
pub const MIN_FIT_SAMPLES: usize = 1000;

const HIST_BINS: usize = 200;
const SMOOTH_WINDOW: usize = 5;
const MIN_PEAK_SEPARATION: usize = 10;

/// Fitted half-normal parameters and the derived distance thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub m_l: f64,
    pub sigma_l: f64,
    pub m_r: f64,
    pub sigma_r: f64,
    pub alpha: f64,
    pub beta: f64,
    pub d_l: f64,
    pub d_r: f64,
    pub t: f64,
    pub sample_pairs: usize,
}

impl DistanceStats {
    /// Derives `d_l = m_l - alpha * sigma_l` and `d_r = m_r + beta * sigma_r`,
    /// clamped so that `0 <= d_l <= t <= d_r <= 2`.
    pub fn from_fit(
        (m_l, sigma_l): (f64, f64),
        (m_r, sigma_r): (f64, f64),
        t: f64,
        alpha: f64,
        beta: f64,
        sample_pairs: usize,
    ) -> Self {
        let (d_l, d_r) = raw_thresholds(m_l, sigma_l, m_r, sigma_r, alpha, beta);
        Self {
            m_l,
            sigma_l,
            m_r,
            sigma_r,
            alpha,
            beta,
            d_l: d_l.min(t).clamp(0.0, 2.0),
            d_r: d_r.max(t).clamp(0.0, 2.0),
            t,
            sample_pairs,
        }
    }

    /// Stats with explicit thresholds and zero spread, for hand-built scenarios.
    pub fn from_thresholds(d_l: f64, t: f64, d_r: f64) -> Result<Self> {
        if !(0.0 <= d_l && d_l <= t && t <= d_r && d_r <= 2.0) {
            return Err(Error::Domain(format!(
                "thresholds must satisfy 0 <= d_l <= t <= d_r <= 2, got {d_l}, {t}, {d_r}"
            )));
        }
        Ok(Self {
            m_l: d_l,
            sigma_l: 0.0,
            m_r: d_r,
            sigma_r: 0.0,
            alpha: 0.0,
            beta: 0.0,
            d_l,
            d_r,
            t,
            sample_pairs: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 <= self.d_l && self.d_l <= self.t && self.t <= self.d_r && self.d_r <= 2.0;
        if !ordered || !(self.t > 0.0 && self.t < 2.0) {
            return Err(Error::Validation(format!(
                "distance stats violate 0 <= d_l <= t <= d_r <= 2 with t in (0, 2): d_l={}, t={}, d_r={}",
                self.d_l, self.t, self.d_r
            )));
        }
        Ok(())
    }
}

/// Unclamped `(d_l, d_r)`.
pub fn raw_thresholds(m_l: f64, sigma_l: f64, m_r: f64, sigma_r: f64, alpha: f64, beta: f64) -> (f64, f64) {
    (m_l - alpha * sigma_l, m_r + beta * sigma_r)
}

/// `1 - cos(x, y)`, clamped into `[0, 2]`.
pub fn cosine_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!("dimension mismatch: {} vs {}", x.len(), y.len())));
    }
    let nx = dot(x, x).sqrt();
    let ny = dot(y, y).sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Domain("cosine distance of a zero vector".into()));
    }
    Ok((1.0 - dot(x, y) / (nx * ny)).clamp(0.0, 2.0))
}

/// Distance between rows `i` and `j`, using the cached row norms. Exactly 0 on the diagonal.
pub fn pair_distance(features: &FeatureSet, i: usize, j: usize) -> f64 {
    if i == j {
        return 0.0;
    }
    let cos = dot(features.row(i), features.row(j)) / (features.norm(i) * features.norm(j));
    (1.0 - cos).clamp(0.0, 2.0)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maps a linear index over unordered pairs `i < j` (row-major) back to `(i, j)`.
fn unrank_pair(n: usize, k: usize) -> (usize, usize) {
    // offset(i) = i * (2n - i - 1) / 2 is the first index of row i
    let offset = |i: usize| i * (2 * n - i - 1) / 2;
    let nf = n as f64;
    let disc = (2.0 * nf - 1.0).powi(2) - 8.0 * k as f64;
    let mut i = (((2.0 * nf - 1.0) - disc.max(0.0).sqrt()) / 2.0).floor() as usize;
    i = i.min(n - 2);
    while i > 0 && offset(i) > k {
        i -= 1;
    }
    while i + 1 < n - 1 && offset(i + 1) <= k {
        i += 1;
    }
    (i, i + 1 + (k - offset(i)))
}

/// All unordered-pair distances when there are at most `max_pairs` of them,
/// otherwise a seeded uniform sample of `max_pairs` distinct pairs.
pub fn pairwise_distance_sample(features: &FeatureSet, max_pairs: usize, seed: u64) -> Vec<f64> {
    let n = features.len();
    let total = n * (n - 1) / 2;
    let pairs: Vec<usize> = if total <= max_pairs {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, total, max_pairs).into_vec();
        picked.sort_unstable();
        picked
    };
    pairs
        .par_iter()
        .map(|&k| {
            let (i, j) = unrank_pair(n, k);
            pair_distance(features, i, j)
        })
        .collect()
}

/// Fits the two half-normal humps and derives the thresholds.
///
/// The sample is sorted first, so the result does not depend on input order.
/// A 200-bin histogram over `[min, max]` is smoothed with a 5-bin moving
/// average; the two highest local maxima at least 10 bins apart give `m_l` and
/// `m_r`. Each scale is the root mean square deviation on the outer side of
/// its mode. Without two such peaks the sample is split at its mean and each
/// side contributes its own mean and standard deviation.
pub fn fit_distance_stats(distances: &[f64], t: f64, alpha: f64, beta: f64) -> Result<DistanceStats> {
    if distances.len() < MIN_FIT_SAMPLES {
        return Err(Error::SampleSize { got: distances.len(), need: MIN_FIT_SAMPLES });
    }
    if !(t > 0.0 && t < 2.0) {
        return Err(Error::Domain(format!("threshold t must lie in (0, 2), got {t}")));
    }
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(Error::Domain(format!("alpha and beta must be non-negative, got {alpha}, {beta}")));
    }
    if let Some(bad) = distances.iter().find(|d| !d.is_finite()) {
        return Err(Error::Domain(format!("non-finite distance {bad}")));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi <= lo {
        return Err(Error::Degenerate(format!("all {} distances equal {lo}", sorted.len())));
    }

    let (left, right) = match histogram_modes(&sorted, lo, hi) {
        Some((m_l, m_r)) => {
            let below = sorted.partition_point(|&d| d <= m_l);
            let above = sorted.partition_point(|&d| d < m_r);
            let sigma_l = rms_about(&sorted[..below], m_l);
            let sigma_r = rms_about(&sorted[above..], m_r);
            ((m_l, sigma_l), (m_r, sigma_r))
        }
        None => {
            let mu = sorted.iter().sum::<f64>() / sorted.len() as f64;
            let split = sorted.partition_point(|&d| d <= mu);
            (mean_std(&sorted[..split]), mean_std(&sorted[split..]))
        }
    };
    Ok(DistanceStats::from_fit(left, right, t, alpha, beta, distances.len()))
}

/// Bin centers of the two dominant peaks of the smoothed histogram, smaller first.
fn histogram_modes(sorted: &[f64], lo: f64, hi: f64) -> Option<(f64, f64)> {
    let width = (hi - lo) / HIST_BINS as f64;
    let mut hist = [0usize; HIST_BINS];
    for &d in sorted {
        let bin = (((d - lo) / width) as usize).min(HIST_BINS - 1);
        hist[bin] += 1;
    }
    let half = SMOOTH_WINDOW / 2;
    let smooth: Vec<f64> = (0..HIST_BINS)
        .map(|i| {
            let window = &hist[i.saturating_sub(half)..(i + half + 1).min(HIST_BINS)];
            window.iter().sum::<usize>() as f64 / window.len() as f64
        })
        .collect();

    // strict on the left, non-strict on the right: a plateau counts once, at its left edge
    let mut peaks: Vec<usize> = (0..HIST_BINS)
        .filter(|&i| {
            smooth[i] > 0.0
                && (i == 0 || smooth[i] > smooth[i - 1])
                && (i + 1 == HIST_BINS || smooth[i] >= smooth[i + 1])
        })
        .collect();
    peaks.sort_by(|&a, &b| smooth[b].total_cmp(&smooth[a]).then(a.cmp(&b)));
    let first = *peaks.first()?;
    let second = *peaks.iter().find(|&&p| p.abs_diff(first) >= MIN_PEAK_SEPARATION)?;
    let center = |bin: usize| lo + (bin as f64 + 0.5) * width;
    let (a, b) = (first.min(second), first.max(second));
    Some((center(a), center(b)))
}

fn rms_about(values: &[f64], center: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|d| (d - center).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (mean, rms_about(values, mean))
}

/// `+1` when `d <= t`, else `-1`.
pub fn pseudo_label(d: f64, stats: &DistanceStats) -> i8 {
    if d <= stats.t {
        1
    } else {
        -1
    }
}

/// Confidence weight of a pair at distance `d`: 1 outside `(d_l, d_r)`,
/// quadratic in the distance to `t` inside, reaching 0 at `t`.
pub fn smooth_weight(d: f64, stats: &DistanceStats) -> f64 {
    let DistanceStats { d_l, d_r, t, .. } = *stats;
    if d <= d_l || d >= d_r {
        1.0
    } else if d <= t {
        (t - d).powi(2) / (t - d_l).powi(2)
    } else {
        (d - t).powi(2) / (d_r - t).powi(2)
    }
}

/// Dense n x n matrix of a per-pair quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatrix<T> {
    n: usize,
    entries: Vec<T>,
}

impl<T: Copy> PairMatrix<T> {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub(crate) fn from_fn(n: usize, f: impl Fn(usize, usize) -> T + Sync) -> Self
    where
        T: Send + Default,
    {
        let mut entries = vec![T::default(); n * n];
        entries.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            for (j, e) in row.iter_mut().enumerate() {
                *e = f(i, j);
            }
        });
        Self { n, entries }
    }
}

/// Pseudo-similarity labels `S` in `{-1, +1}`.
pub type PseudoGraph = PairMatrix<i8>;
/// Smooth confidence weights `W1` in `[0, 1]`.
pub type SmoothWeights = PairMatrix<f64>;

pub(crate) fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        return Err(Error::Capacity(format!(
            "{n} points exceed the dense-matrix cap of {cap}; evaluate pairs lazily instead"
        )));
    }
    Ok(())
}

pub fn build_pseudo_graph(features: &FeatureSet, stats: &DistanceStats) -> Result<PseudoGraph> {
    build_pseudo_graph_capped(features, stats, MATERIALIZATION_CAP)
}

pub fn build_pseudo_graph_capped(features: &FeatureSet, stats: &DistanceStats, cap: usize) -> Result<PseudoGraph> {
    check_cap(features.len(), cap)?;
    Ok(PairMatrix::from_fn(features.len(), |i, j| {
        pseudo_label(pair_distance(features, i, j), stats)
    }))
}

pub fn build_smooth_weights(features: &FeatureSet, stats: &DistanceStats) -> Result<SmoothWeights> {
    build_smooth_weights_capped(features, stats, MATERIALIZATION_CAP)
}

pub fn build_smooth_weights_capped(features: &FeatureSet, stats: &DistanceStats, cap: usize) -> Result<SmoothWeights> {
    check_cap(features.len(), cap)?;
    Ok(PairMatrix::from_fn(features.len(), |i, j| {
        smooth_weight(pair_distance(features, i, j), stats)
    }))
}
