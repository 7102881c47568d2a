//! Pair distillation: pairs whose pseudo-label disagrees with cluster
//! co-membership are dropped from the loss, the rest keep their smooth weight.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::graph::{check_cap, pair_distance, pseudo_label, smooth_weight, DistanceStats, PairMatrix, MATERIALIZATION_CAP};
use crate::kmeans::ClusterAssignment;

/// Which weighting terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Smooth weight times distilling mask.
    #[default]
    Full,
    /// Distilling mask only.
    V1,
    /// Every pair weighted 1.
    V2,
}

impl Ablation {
    pub fn code(self) -> u8 {
        match self {
            Ablation::Full => 0,
            Ablation::V1 => 1,
            Ablation::V2 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Ablation::Full),
            1 => Some(Ablation::V1),
            2 => Some(Ablation::V2),
            _ => None,
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::V1 => "v1",
            Ablation::V2 => "v2",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Ablation::Full),
            "v1" => Ok(Ablation::V1),
            "v2" => Ok(Ablation::V2),
            other => Err(Error::Validation(format!("unknown ablation {other:?}, expected full|v1|v2"))),
        }
    }
}

/// `+1` for co-clustered points, `-1` otherwise.
pub fn cluster_sign(c_i: usize, c_j: usize) -> i8 {
    if c_i == c_j {
        1
    } else {
        -1
    }
}

/// 1 when the pseudo-label and cluster sign agree, 0 otherwise.
pub fn distill_mask(s: i8, c: i8) -> u8 {
    u8::from(s == c)
}

/// Lazy per-pair view of the pseudo-labels and final weights over one feature set.
#[derive(Debug, Clone, Copy)]
pub struct PairGuidance<'a> {
    pub features: &'a FeatureSet,
    pub stats: &'a DistanceStats,
    pub clusters: &'a [usize],
    pub ablation: Ablation,
}

impl<'a> PairGuidance<'a> {
    pub fn new(
        features: &'a FeatureSet,
        stats: &'a DistanceStats,
        clusters: &'a ClusterAssignment,
        ablation: Ablation,
    ) -> Result<Self> {
        if clusters.len() != features.len() {
            return Err(Error::Validation(format!(
                "{} cluster labels for {} feature rows",
                clusters.len(),
                features.len()
            )));
        }
        stats.validate()?;
        Ok(Self { features, stats, clusters: &clusters.labels, ablation })
    }

    /// `(S_ij, W_ij)` for one pair.
    pub fn pair(&self, i: usize, j: usize) -> (i8, f64) {
        let d = pair_distance(self.features, i, j);
        let s = pseudo_label(d, self.stats);
        let w = match self.ablation {
            Ablation::V2 => 1.0,
            Ablation::V1 => distill_mask(s, cluster_sign(self.clusters[i], self.clusters[j])) as f64,
            Ablation::Full => {
                let mask = distill_mask(s, cluster_sign(self.clusters[i], self.clusters[j]));
                if mask == 0 {
                    0.0
                } else {
                    smooth_weight(d, self.stats)
                }
            }
        };
        (s, w)
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.pair(i, j).1
    }

    /// Dense `m x m` pseudo-labels and weights for the rows in `batch`.
    pub fn batch(&self, batch: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let m = batch.len();
        let mut s = vec![0.0; m * m];
        let mut w = vec![0.0; m * m];
        for (a, &i) in batch.iter().enumerate() {
            for (b, &j) in batch.iter().enumerate().skip(a) {
                let (sij, wij) = self.pair(i, j);
                s[a * m + b] = sij as f64;
                s[b * m + a] = sij as f64;
                w[a * m + b] = wij;
                w[b * m + a] = wij;
            }
        }
        (s, w)
    }
}

/// Final weight of pair `(i, j)` under the given ablation.
pub fn distilled_weight(
    i: usize,
    j: usize,
    features: &FeatureSet,
    stats: &DistanceStats,
    clusters: &ClusterAssignment,
    ablation: Ablation,
) -> f64 {
    PairGuidance { features, stats, clusters: &clusters.labels, ablation }.weight(i, j)
}

/// Cluster co-membership signs `C`.
pub type RelationshipMatrix = PairMatrix<i8>;
/// Final weights `W`.
pub type DistilledWeights = PairMatrix<f64>;

pub fn build_relationship_matrix(clusters: &ClusterAssignment) -> Result<RelationshipMatrix> {
    check_cap(clusters.len(), MATERIALIZATION_CAP)?;
    Ok(PairMatrix::from_fn(clusters.len(), |i, j| {
        cluster_sign(clusters.labels[i], clusters.labels[j])
    }))
}

pub fn build_distilled_weights(
    features: &FeatureSet,
    stats: &DistanceStats,
    clusters: &ClusterAssignment,
    ablation: Ablation,
) -> Result<DistilledWeights> {
    check_cap(features.len(), MATERIALIZATION_CAP)?;
    let guidance = PairGuidance::new(features, stats, clusters, ablation)?;
    Ok(PairMatrix::from_fn(features.len(), |i, j| guidance.weight(i, j)))
}
