use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dsg_core::dataset::{self, save_matrix};
use dsg_core::eval::{self, EvalConfig};
use dsg_core::graph::{self, fit_distance_stats, pairwise_distance_sample};
use dsg_core::kmeans::{self as km, kmeans_best_of, load_cluster_labels, ClusterAssignment};
use dsg_core::model::{self, HashModel, HashModelConfig};
use dsg_core::pipeline::{self, run_pipeline, PipelineConfig};
use dsg_core::synth::{generate_synthetic, holdout_split, SynthSpec};
use dsg_core::{Ablation, FeatureSet};

#[derive(Parser, Debug)]
#[command(name = "dsg", version, about = "Unsupervised hashing with distilled smooth guidance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit distance statistics and thresholds, write them as JSON.
    Stats(StatsArgs),
    /// K-means over the features; writes `id,cluster` CSV and centroids.
    Cluster(ClusterArgs),
    /// Train a hash head and write a model checkpoint.
    Train(TrainArgs),
    /// Encode features into packed binary codes.
    Encode(EncodeArgs),
    /// Score Hamming ranking of query codes against database codes.
    Eval(EvalArgs),
    /// Run stats, cluster, train, encode and eval from one JSON config.
    Pipeline(PipelineArgs),
    /// Generate a seeded Gaussian-cluster dataset.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Part {
    Train,
    Query,
    Retrieval,
}

#[derive(Args, Debug)]
struct FeatureInput {
    #[arg(long)]
    features: PathBuf,
    /// Keep feature rows as stored instead of L2-normalizing them.
    #[arg(long)]
    no_normalize: bool,
    /// Restrict to one part of a split file.
    #[arg(long, requires = "part")]
    split: Option<PathBuf>,
    #[arg(long, requires = "split")]
    part: Option<Part>,
}

impl FeatureInput {
    fn load(&self) -> Result<FeatureSet> {
        let features = dataset::load_features_with(&self.features, !self.no_normalize)
            .with_context(|| format!("loading features {}", self.features.display()))?;
        let (Some(split_path), Some(part)) = (&self.split, self.part) else {
            return Ok(features);
        };
        let split = dataset::load_split(split_path)?;
        split.validate(&features)?;
        let ids = match part {
            Part::Train => &split.train,
            Part::Query => &split.query,
            Part::Retrieval => &split.retrieval,
        };
        Ok(features.select(ids)?)
    }
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[command(flatten)]
    input: FeatureInput,
    #[arg(long, default_value_t = graph::DEFAULT_T)]
    t: f64,
    #[arg(long, default_value_t = graph::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = graph::DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = graph::DEFAULT_MAX_PAIRS)]
    max_pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[command(flatten)]
    input: FeatureInput,
    #[arg(long, default_value_t = km::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = km::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Independent seeded runs; the lowest inertia wins.
    #[arg(long, default_value_t = km::DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(long, default_value = "clusters.csv")]
    out: PathBuf,
    #[arg(long, default_value = "centroids.dsgf")]
    out_centroids: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    input: FeatureInput,
    /// JSON written by `dsg stats`.
    #[arg(long)]
    stats: PathBuf,
    /// CSV written by `dsg cluster`.
    #[arg(long)]
    clusters: PathBuf,
    #[arg(long, default_value_t = 64)]
    bits: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = model::DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = model::DEFAULT_LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = model::DEFAULT_MOMENTUM)]
    momentum: f64,
    #[arg(long, default_value = "full")]
    ablation: Ablation,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Vec<usize>,
    /// Drop the i == j terms from the loss.
    #[arg(long)]
    exclude_diagonal: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "model.dsgm")]
    out: PathBuf,
    /// Optional JSON with per-epoch losses.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: FeatureInput,
    #[arg(long, default_value = "codes.dsgc")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    query_codes: PathBuf,
    #[arg(long)]
    db_codes: PathBuf,
    #[arg(long)]
    query_labels: PathBuf,
    #[arg(long)]
    db_labels: PathBuf,
    #[arg(long, default_value_t = eval::DEFAULT_R)]
    r: usize,
    #[arg(long, default_value_t = eval::DEFAULT_TOPN_MAX)]
    topn_max: usize,
    #[arg(long, default_value_t = eval::DEFAULT_TOPN_STEP)]
    topn_step: usize,
    /// Directory receiving report.json, topn.csv and pr.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    ablation: Option<Ablation>,
    #[arg(long)]
    bits: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Sets the stats, kmeans and train seeds together.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    clusters: usize,
    /// Points per cluster.
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    /// Per-coordinate noise standard deviation.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    center_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_features: PathBuf,
    #[arg(long)]
    out_labels: PathBuf,
    /// Also write a train/query/retrieval split.
    #[arg(long)]
    out_split: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    queries_per_cluster: usize,
}

fn write_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn stats(args: StatsArgs) -> Result<()> {
    let features = args.input.load()?;
    let sample = pairwise_distance_sample(&features, args.max_pairs, args.seed);
    let stats = fit_distance_stats(&sample, args.t, args.alpha, args.beta)?;
    write_json(&stats, args.out.as_deref())
}

fn cluster(args: ClusterArgs) -> Result<()> {
    let features = args.input.load()?;
    let clusters = kmeans_best_of(&features, args.k, args.seed, args.max_iters, args.restarts)?;
    pipeline::save_clusters(&clusters, features.ids(), &args.out, &args.out_centroids)?;
    eprintln!("k = {}, inertia = {:.6}, iterations = {}", clusters.k, clusters.inertia, clusters.iterations);
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let features = args.input.load()?;
    let stats = pipeline::load_stats(&args.stats)?;
    let labels = load_cluster_labels(&args.clusters, features.ids())?;
    let clusters = ClusterAssignment::from_labels(&features, labels)?;
    let config = HashModelConfig {
        in_dim: features.dim(),
        code_len: args.bits,
        hidden_dims: args.hidden,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        momentum: args.momentum,
        epochs: args.epochs,
        seed: args.seed,
        ablation: args.ablation,
        include_diagonal: !args.exclude_diagonal,
    };
    let mut model = HashModel::init(config)?;
    let report = dsg_core::train(&mut model, &features, &stats, &clusters)?;
    model.save(&args.out)?;
    if let Some(path) = &args.report {
        write_json(&report, Some(path))?;
    }
    eprintln!(
        "trained {} epochs, final loss {:.6} ({:.2}s)",
        report.epochs, report.final_loss, report.wall_time_secs
    );
    Ok(())
}

fn encode(args: EncodeArgs) -> Result<()> {
    let model = HashModel::load(&args.model)?;
    let features = args.input.load()?;
    let codes = model.encode(&features)?;
    dataset::save_codes(&codes, &args.out)?;
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let query_codes = dataset::load_codes(&args.query_codes)?;
    let db_codes = dataset::load_codes(&args.db_codes)?;
    let query_labels = dataset::load_labels(&args.query_labels)?;
    let db_labels = dataset::load_labels(&args.db_labels)?;
    let config = EvalConfig { r_cutoff: args.r, topn_max: args.topn_max, topn_step: args.topn_step, multi_label: true };
    let report = dsg_core::evaluate(&query_codes, &db_codes, &query_labels, &db_labels, &config)?;
    report.save_json(args.out_dir.join("report.json"))?;
    report.save_topn_csv(args.out_dir.join("topn.csv"))?;
    report.save_pr_csv(args.out_dir.join("pr.csv"))?;
    println!("MAP@{} = {:.4} over {} queries", args.r, report.map, report.num_queries);
    Ok(())
}

fn pipeline_cmd(args: PipelineArgs) -> Result<()> {
    let mut config = PipelineConfig::load(&args.config)?;
    if let Some(dir) = args.out_dir {
        config.output_dir = dir;
    }
    if let Some(a) = args.ablation {
        config.ablation = a;
    }
    if let Some(b) = args.bits {
        config.bits = b;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(s) = args.seed {
        config.stats_seed = s;
        config.kmeans_seed = s;
        config.train_seed = s;
    }
    let (report, artifacts) = run_pipeline(&config)?;
    println!(
        "MAP@{} = {:.4} over {} queries; report at {}",
        report.eval.r_cutoff,
        report.eval.map,
        report.eval.num_queries,
        artifacts.report.display()
    );
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        num_clusters: args.clusters,
        points_per_cluster: args.points,
        dim: args.dim,
        center_scale: args.center_scale,
        noise_scale: args.noise,
        seed: args.seed,
    };
    let (features, labels) = generate_synthetic(&spec)?;
    let split = match &args.out_split {
        Some(_) => Some(holdout_split(&labels, args.queries_per_cluster, args.seed)?),
        None => None,
    };
    save_matrix(features.ids(), features.dim(), features.data(), &args.out_features)?;
    dataset::save_labels(&labels, &args.out_labels)?;
    if let (Some(path), Some(split)) = (&args.out_split, &split) {
        dataset::save_split(split, path)?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<dsg_core::Error>())
        .map_or_else(
            || if err.chain().any(|e| e.is::<std::io::Error>()) { 2 } else { 1 },
            |e| e.exit_code() as u8,
        )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Stats(a) => stats(a),
        Command::Cluster(a) => cluster(a),
        Command::Train(a) => train_cmd(a),
        Command::Encode(a) => encode(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
