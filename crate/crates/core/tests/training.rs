mod common;

use common::*;
use dsg_core::graph::pairwise_distance_sample;
use dsg_core::{
    code_similarity, fit_distance_stats, generate_synthetic, kmeans, kmeans_best_of, train, ClusterAssignment, DistanceStats,
    FeatureSet, HashModel, HashModelConfig, SynthSpec,
};

/// Two tight, well-separated groups of 60 points.
fn two_clusters() -> (FeatureSet, ClusterAssignment, DistanceStats) {
    let spec = SynthSpec { num_clusters: 2, points_per_cluster: 60, dim: 16, center_scale: 1.0, noise_scale: 0.02, seed: 9 };
    let (fs, _) = generate_synthetic(&spec).unwrap();
    let clusters = kmeans(&fs, 2, 0, 100).unwrap();
    let stats = fit_distance_stats(&pairwise_distance_sample(&fs, 1_000_000, 0), 0.1, 2.0, 2.0).unwrap();
    (fs, clusters, stats)
}

fn config(seed: u64) -> HashModelConfig {
    let mut c = HashModelConfig::new(16, 16);
    c.epochs = 50;
    c.seed = seed;
    c
}

#[test]
fn training_separates_two_clusters() {
    let (fs, clusters, stats) = two_clusters();
    let mut model = HashModel::init(config(1)).unwrap();
    let report = train(&mut model, &fs, &stats, &clusters).unwrap();
    assert_eq!(report.epochs, 50);
    assert!(report.final_loss < report.epoch_losses[0], "{:?}", report.epoch_losses);

    let v = model.forward(fs.data()).unwrap();
    let (mut within, mut between) = ((0.0, 0), (0.0, 0));
    for i in 0..fs.len() {
        for j in i + 1..fs.len() {
            let h = code_similarity(v.row(i), v.row(j));
            if i / 60 == j / 60 {
                within = (within.0 + h, within.1 + 1);
            } else {
                between = (between.0 + h, between.1 + 1);
            }
        }
    }
    let within = within.0 / within.1 as f64;
    let between = between.0 / between.1 as f64;
    assert!(within > between, "within {within}, between {between}");
}

#[test]
fn training_is_deterministic() {
    let (fs, clusters, stats) = two_clusters();
    let run = || {
        let mut c = config(4);
        c.epochs = 10;
        let mut model = HashModel::init(c).unwrap();
        let report = train(&mut model, &fs, &stats, &clusters).unwrap();
        (model.to_bytes(), report.epoch_losses)
    };
    let (m1, l1) = run();
    let (m2, l2) = run();
    assert_eq!(m1, m2);
    assert_eq!(l1.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), l2.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}

#[test]
fn kmeans_recovers_synthetic_partition() {
    let spec = SynthSpec { num_clusters: 10, points_per_cluster: 100, dim: 128, center_scale: 1.0, noise_scale: 0.05, seed: 0 };
    let (fs, labels) = generate_synthetic(&spec).unwrap();
    let clusters = kmeans_best_of(&fs, 10, 0, 300, dsg_core::kmeans::DEFAULT_RESTARTS).unwrap();
    // same partition up to relabeling: a bijection between found and true clusters
    let mut map = [usize::MAX; 10];
    for i in 0..fs.len() {
        let truth = labels.labels(i)[0] as usize;
        let found = clusters.labels[i];
        if map[found] == usize::MAX {
            map[found] = truth;
        }
        assert_eq!(map[found], truth, "point {i} split from its generating cluster");
    }
    let mut targets = map.to_vec();
    targets.sort_unstable();
    assert_eq!(targets, (0..10).collect::<Vec<_>>());
}

#[test]
fn within_cluster_distance_vanishes_without_noise() {
    let spec = SynthSpec { num_clusters: 3, points_per_cluster: 20, dim: 32, center_scale: 2.0, noise_scale: 0.0, seed: 1 };
    let (fs, _) = generate_synthetic(&spec).unwrap();
    for i in 0..fs.len() {
        for j in 0..fs.len() {
            if i / 20 == j / 20 {
                assert!(naive_distance(fs.row(i), fs.row(j)) < 1e-12);
            }
        }
    }
}
