//! Seeded Gaussian-cluster datasets for smoke tests and desk-scale experiments.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureSet, LabelSet, SplitSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_clusters: usize,
    pub points_per_cluster: usize,
    pub dim: usize,
    /// Norm of every cluster center.
    pub center_scale: f64,
    /// Per-coordinate standard deviation of the additive noise.
    pub noise_scale: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters == 0 || self.points_per_cluster == 0 || self.dim == 0 {
            return Err(Error::Validation("cluster count, points per cluster and dim must be >= 1".into()));
        }
        if self.num_clusters * self.points_per_cluster < 2 {
            return Err(Error::Validation("synthetic set needs at least 2 points".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Validation(format!("noise scale must be >= 0, got {}", self.noise_scale)));
        }
        if !(self.center_scale > 0.0 && self.center_scale.is_finite()) {
            return Err(Error::Validation(format!("center scale must be > 0, got {}", self.center_scale)));
        }
        Ok(())
    }
}

/// Centers uniform on the sphere of radius `center_scale`; each point is its
/// center plus isotropic Gaussian noise, L2-normalized. Labels are the
/// generating cluster. Ids are `s000000`, `s000001`, ... in cluster-major order.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(FeatureSet, LabelSet)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut centers = Vec::with_capacity(spec.num_clusters * spec.dim);
    for _ in 0..spec.num_clusters {
        let mut c: Vec<f64> = (0..spec.dim).map(|_| gauss(&mut rng)).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        c.iter_mut().for_each(|v| *v *= spec.center_scale / norm);
        centers.extend(c);
    }

    let n = spec.num_clusters * spec.points_per_cluster;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.num_clusters {
        let center = &centers[c * spec.dim..(c + 1) * spec.dim];
        for _ in 0..spec.points_per_cluster {
            data.extend(center.iter().map(|&v| v + spec.noise_scale * gauss(&mut rng)));
            labels.push(vec![c as u32]);
        }
    }
    let ids: Vec<String> = (0..n).map(|i| format!("s{i:06}")).collect();
    let features = FeatureSet::new(ids.clone(), spec.dim, data)?.normalized();
    let labels = LabelSet::new(ids, labels)?;
    Ok((features, labels))
}

/// Holds out `queries_per_class` ids per (first) label as queries; the rest form
/// the retrieval set, which doubles as the training set.
pub fn holdout_split(labels: &LabelSet, queries_per_class: usize, seed: u64) -> Result<SplitSpec> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut taken = vec![0usize; labels.num_classes()];
    let mut is_query = vec![false; labels.len()];
    for &i in &order {
        let class = labels.labels(i)[0] as usize;
        if taken[class] < queries_per_class {
            taken[class] += 1;
            is_query[i] = true;
        }
    }
    let ids = labels.ids();
    let query: Vec<String> = (0..ids.len()).filter(|&i| is_query[i]).map(|i| ids[i].clone()).collect();
    let retrieval: Vec<String> = (0..ids.len()).filter(|&i| !is_query[i]).map(|i| ids[i].clone()).collect();
    if query.is_empty() || retrieval.is_empty() {
        return Err(Error::Validation("holdout split left the query or retrieval set empty".into()));
    }
    Ok(SplitSpec { train: retrieval.clone(), query, retrieval })
}
