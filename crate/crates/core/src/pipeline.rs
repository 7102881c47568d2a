//! End-to-end run: distance statistics, clustering, training, encoding and
//! evaluation, with every intermediate artifact written to one directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    load_features_with, load_labels, load_split, save_codes, save_matrix, write_file, FeatureSet,
    LabelSet, SplitSpec,
};
use crate::distill::Ablation;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport};
use crate::graph::{fit_distance_stats, pairwise_distance_sample, DistanceStats};
use crate::kmeans::{kmeans_best_of, save_cluster_labels, ClusterAssignment};
use crate::model::{HashModel, HashModelConfig};
use crate::train::train;
use crate::{eval, graph, kmeans as km, model};

fn default_true() -> bool {
    true
}

/// Every knob of a run. Only the three input paths and `output_dir` are required in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub features: PathBuf,
    pub labels: PathBuf,
    /// Without a split every row is trained on, queried and retrieved.
    #[serde(default)]
    pub split: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub normalize: bool,

    #[serde(default = "PipelineConfig::default_t")]
    pub t: f64,
    #[serde(default = "PipelineConfig::default_alpha")]
    pub alpha: f64,
    #[serde(default = "PipelineConfig::default_beta")]
    pub beta: f64,
    #[serde(default = "PipelineConfig::default_max_pairs")]
    pub max_pairs: usize,
    #[serde(default)]
    pub stats_seed: u64,

    #[serde(default = "PipelineConfig::default_k")]
    pub k: usize,
    #[serde(default = "PipelineConfig::default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "PipelineConfig::default_restarts")]
    pub kmeans_restarts: usize,
    #[serde(default)]
    pub kmeans_seed: u64,

    #[serde(default = "PipelineConfig::default_bits")]
    pub bits: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "PipelineConfig::default_epochs")]
    pub epochs: usize,
    #[serde(default = "PipelineConfig::default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "PipelineConfig::default_lr")]
    pub lr: f64,
    #[serde(default = "PipelineConfig::default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default = "default_true")]
    pub include_diagonal: bool,
    #[serde(default)]
    pub train_seed: u64,

    #[serde(default = "PipelineConfig::default_r")]
    pub r_cutoff: usize,
    #[serde(default = "PipelineConfig::default_topn_max")]
    pub topn_max: usize,
    #[serde(default = "PipelineConfig::default_topn_step")]
    pub topn_step: usize,
}

impl PipelineConfig {
    fn default_t() -> f64 {
        graph::DEFAULT_T
    }
    fn default_alpha() -> f64 {
        graph::DEFAULT_ALPHA
    }
    fn default_beta() -> f64 {
        graph::DEFAULT_BETA
    }
    fn default_max_pairs() -> usize {
        graph::DEFAULT_MAX_PAIRS
    }
    fn default_k() -> usize {
        km::DEFAULT_K
    }
    fn default_max_iters() -> usize {
        km::DEFAULT_MAX_ITERS
    }
    fn default_restarts() -> usize {
        km::DEFAULT_RESTARTS
    }
    fn default_bits() -> usize {
        64
    }
    fn default_epochs() -> usize {
        50
    }
    fn default_batch_size() -> usize {
        model::DEFAULT_BATCH_SIZE
    }
    fn default_lr() -> f64 {
        model::DEFAULT_LEARNING_RATE
    }
    fn default_momentum() -> f64 {
        model::DEFAULT_MOMENTUM
    }
    fn default_r() -> usize {
        eval::DEFAULT_R
    }
    fn default_topn_max() -> usize {
        eval::DEFAULT_TOPN_MAX
    }
    fn default_topn_step() -> usize {
        eval::DEFAULT_TOPN_STEP
    }

    /// Config with every parameter at its default.
    pub fn new(features: PathBuf, labels: PathBuf, split: Option<PathBuf>, output_dir: PathBuf) -> Self {
        let json = serde_json::json!({
            "features": features,
            "labels": labels,
            "split": split,
            "output_dir": output_dir,
        });
        serde_json::from_value(json).expect("defaults deserialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    pub fn model_config(&self, in_dim: usize) -> HashModelConfig {
        HashModelConfig {
            in_dim,
            code_len: self.bits,
            hidden_dims: self.hidden_dims.clone(),
            batch_size: self.batch_size,
            learning_rate: self.lr,
            momentum: self.momentum,
            epochs: self.epochs,
            seed: self.train_seed,
            ablation: self.ablation,
            include_diagonal: self.include_diagonal,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { r_cutoff: self.r_cutoff, topn_max: self.topn_max, topn_step: self.topn_step, multi_label: true }
    }

    fn validate_params(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t < 2.0) {
            return Err(Error::Validation(format!("t must lie in (0, 2), got {}", self.t)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Validation("alpha and beta must be non-negative".into()));
        }
        if self.k < 2 {
            return Err(Error::Validation(format!("k must be at least 2, got {}", self.k)));
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::Validation("kmeans_restarts must be at least 1".into()));
        }
        self.model_config(1).validate()?;
        self.eval_config().validate()?;
        if !(crate::dataset::MIN_CODE_LEN..=crate::dataset::MAX_CODE_LEN).contains(&self.bits) {
            return Err(Error::Validation(format!("bits must lie in 8..=4096 for packed codes, got {}", self.bits)));
        }
        Ok(())
    }
}

/// Seeds of every stage, stored with the report for replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub stats: u64,
    pub kmeans: u64,
    pub train: u64,
}

/// Written as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub eval: EvalReport,
    pub stats: DistanceStats,
    pub seeds: StageSeeds,
    pub ablation: Ablation,
    pub bits: usize,
    pub kmeans_inertia: f64,
    pub train_epoch_losses: Vec<f64>,
}

/// Where each artifact of a run lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub stats: PathBuf,
    pub clusters: PathBuf,
    pub centroids: PathBuf,
    pub model: PathBuf,
    pub query_codes: PathBuf,
    pub db_codes: PathBuf,
    pub report: PathBuf,
    pub topn_csv: PathBuf,
    pub pr_csv: PathBuf,
}

impl Artifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            stats: dir.join("stats.json"),
            clusters: dir.join("clusters.csv"),
            centroids: dir.join("centroids.dsgf"),
            model: dir.join("model.dsgm"),
            query_codes: dir.join("query.dsgc"),
            db_codes: dir.join("db.dsgc"),
            report: dir.join("report.json"),
            topn_csv: dir.join("topn.csv"),
            pr_csv: dir.join("pr.csv"),
        }
    }
}

/// Validated inputs of a run, loaded before anything is written.
pub struct PipelineInputs {
    pub features: FeatureSet,
    pub labels: LabelSet,
    pub split: SplitSpec,
}

pub fn load_inputs(config: &PipelineConfig) -> Result<PipelineInputs> {
    config.validate_params()?;
    let features = load_features_with(&config.features, config.normalize)
        .map_err(|e| e.in_stage("load", config.features.display().to_string()))?;
    let labels = load_labels(&config.labels).map_err(|e| e.in_stage("load", config.labels.display().to_string()))?;
    let split = match &config.split {
        Some(path) => load_split(path).map_err(|e| e.in_stage("load", path.display().to_string()))?,
        None => {
            let all = features.ids().to_vec();
            SplitSpec { train: all.clone(), query: all.clone(), retrieval: all }
        }
    };
    if config.split.is_some() {
        split.validate(&features).map_err(|e| e.in_stage("load", "split"))?;
    }
    labels.align_to(&split.query).map_err(|e| e.in_stage("load", "query labels"))?;
    labels.align_to(&split.retrieval).map_err(|e| e.in_stage("load", "retrieval labels"))?;
    Ok(PipelineInputs { features, labels, split })
}

pub fn fit_stats(train: &FeatureSet, config: &PipelineConfig) -> Result<DistanceStats> {
    let sample = pairwise_distance_sample(train, config.max_pairs, config.stats_seed);
    fit_distance_stats(&sample, config.t, config.alpha, config.beta)
}

pub fn save_stats(stats: &DistanceStats, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(stats)?;
    write_file(path.as_ref(), text.as_bytes())
}

pub fn load_stats(path: impl AsRef<Path>) -> Result<DistanceStats> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stats: DistanceStats =
        serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    stats.validate()?;
    Ok(stats)
}

pub fn save_clusters(clusters: &ClusterAssignment, ids: &[String], labels_path: &Path, centroids_path: &Path) -> Result<()> {
    save_cluster_labels(ids, &clusters.labels, labels_path)?;
    let centroid_ids: Vec<String> = (0..clusters.k).map(|c| format!("centroid{c}")).collect();
    save_matrix(&centroid_ids, clusters.dim, &clusters.centroids, centroids_path)
}

/// Runs every stage and writes all artifacts under `config.output_dir`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<(PipelineReport, Artifacts)> {
    let inputs = load_inputs(config)?;
    let out = Artifacts::in_dir(&config.output_dir);
    let ctx = |p: &Path| p.display().to_string();

    let train_set = inputs.features.select(&inputs.split.train).map_err(|e| e.in_stage("load", "train subset"))?;
    if config.k > train_set.len() || config.batch_size > train_set.len() {
        return Err(Error::Validation(format!(
            "k = {} and batch size = {} must not exceed the {} training rows",
            config.k,
            config.batch_size,
            train_set.len()
        ))
        .in_stage("load", "train subset"));
    }

    let stats = fit_stats(&train_set, config).map_err(|e| e.in_stage("stats", ctx(&out.stats)))?;
    save_stats(&stats, &out.stats).map_err(|e| e.in_stage("stats", ctx(&out.stats)))?;

    let clusters = kmeans_best_of(&train_set, config.k, config.kmeans_seed, config.max_iters, config.kmeans_restarts)
        .map_err(|e| e.in_stage("cluster", ctx(&out.clusters)))?;
    save_clusters(&clusters, train_set.ids(), &out.clusters, &out.centroids)
        .map_err(|e| e.in_stage("cluster", ctx(&out.clusters)))?;

    let mut model = HashModel::init(config.model_config(train_set.dim())).map_err(|e| e.in_stage("train", ctx(&out.model)))?;
    let train_report =
        train(&mut model, &train_set, &stats, &clusters).map_err(|e| e.in_stage("train", ctx(&out.model)))?;
    model.save(&out.model).map_err(|e| e.in_stage("train", ctx(&out.model)))?;

    let encode = |ids: &[String], path: &Path| -> Result<crate::dataset::CodeSet> {
        let subset = inputs.features.select(ids)?;
        let codes = model.encode(&subset)?;
        save_codes(&codes, path)?;
        Ok(codes)
    };
    let query_codes = encode(&inputs.split.query, &out.query_codes).map_err(|e| e.in_stage("encode", ctx(&out.query_codes)))?;
    let db_codes = encode(&inputs.split.retrieval, &out.db_codes).map_err(|e| e.in_stage("encode", ctx(&out.db_codes)))?;

    let report = evaluate(&query_codes, &db_codes, &inputs.labels, &inputs.labels, &config.eval_config())
        .map_err(|e| e.in_stage("eval", ctx(&out.report)))?;
    report.save_topn_csv(&out.topn_csv).map_err(|e| e.in_stage("eval", ctx(&out.topn_csv)))?;
    report.save_pr_csv(&out.pr_csv).map_err(|e| e.in_stage("eval", ctx(&out.pr_csv)))?;

    let full = PipelineReport {
        eval: report,
        stats,
        seeds: StageSeeds { stats: config.stats_seed, kmeans: config.kmeans_seed, train: config.train_seed },
        ablation: config.ablation,
        bits: config.bits,
        kmeans_inertia: clusters.inertia,
        train_epoch_losses: train_report.epoch_losses,
    };
    let text = serde_json::to_string_pretty(&full)?;
    write_file(&out.report, text.as_bytes()).map_err(|e| e.in_stage("eval", ctx(&out.report)))?;
    Ok((full, out))
}
