//! Unsupervised hashing with distilled smooth guidance.
//!
//! Given pre-extracted feature vectors, the pipeline
//!
//! 1. labels every pair similar or dissimilar by thresholding cosine distance
//!    ([`graph`]),
//! 2. weights each pair by how confidently its distance sits away from the
//!    threshold ([`graph::smooth_weight`]),
//! 3. drops pairs whose label contradicts K-means co-membership ([`distill`]),
//! 4. trains a `tanh` hash head on the weighted pairwise L2 loss with momentum
//!    SGD ([`model`], [`train`]),
//! 5. encodes with `sign` and scores Hamming ranking by MAP@R, Top-N precision
//!    and a radius-swept precision-recall curve ([`eval`]).

pub mod dataset;
pub mod distill;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kmeans;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod train;

pub use dataset::{
    load_codes, load_features, load_features_with, load_labels, load_split, save_codes, save_features,
    save_labels, save_split, CodeSet, FeatureSet, LabelSet, SplitSpec,
};
pub use distill::{distill_mask, distilled_weight, cluster_sign, Ablation, PairGuidance};
pub use error::{Error, Result};
pub use eval::{average_precision, evaluate, hamming_distance, rank_by_hamming, EvalConfig, EvalReport};
pub use graph::{cosine_distance, fit_distance_stats, pairwise_distance_sample, pseudo_label, smooth_weight, DistanceStats};
pub use kmeans::{kmeans, kmeans_best_of, ClusterAssignment};
pub use model::{batch_loss, code_similarity, HashModel, HashModelConfig, RelaxedCodes};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineReport};
pub use synth::{generate_synthetic, SynthSpec};
pub use train::{train, TrainReport};
