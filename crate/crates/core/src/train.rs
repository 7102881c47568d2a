//! Mini-batch SGD with momentum over lazily built pair guidance.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSet;
use crate::distill::PairGuidance;
use crate::error::{Error, Result};
use crate::graph::DistanceStats;
use crate::kmeans::ClusterAssignment;
use crate::model::{Gradients, HashModel, Layer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss of every epoch, in order.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub epochs: usize,
    pub wall_time_secs: f64,
}

/// Classical momentum: `v <- mu * v - lr * g; theta <- theta + v`.
#[derive(Debug, Clone)]
pub struct MomentumSgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Gradients,
}

impl MomentumSgd {
    pub fn new(model: &HashModel) -> Self {
        Self {
            learning_rate: model.config.learning_rate,
            momentum: model.config.momentum,
            velocity: model.layers.iter().map(|l| Layer::zeros(l.fan_in, l.fan_out)).collect(),
        }
    }

    pub fn step(&mut self, model: &mut HashModel, grads: &Gradients) {
        let (lr, mu) = (self.learning_rate, self.momentum);
        for ((layer, vel), grad) in model.layers.iter_mut().zip(&mut self.velocity).zip(grads) {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let vels = vel.weights.iter_mut().chain(vel.bias.iter_mut());
            let gs = grad.weights.iter().chain(&grad.bias);
            for ((p, v), g) in params.zip(vels).zip(gs) {
                *v = mu * *v - lr * g;
                *p += *v;
            }
        }
    }
}

/// Gathers rows `idx` of `features` into one row-major buffer.
pub fn gather_rows(features: &FeatureSet, idx: &[usize]) -> Vec<f64> {
    idx.iter().flat_map(|&i| features.row(i).iter().copied()).collect()
}

/// Runs `model.config.epochs` epochs of shuffled mini-batch training.
///
/// Each epoch visits every row once in a seeded random order; the last batch
/// may be shorter. Fully deterministic for a fixed config.
pub fn train(
    model: &mut HashModel,
    features: &FeatureSet,
    stats: &DistanceStats,
    clusters: &ClusterAssignment,
) -> Result<TrainReport> {
    let config = model.config.clone();
    config.validate()?;
    if features.dim() != config.in_dim {
        return Err(Error::Validation(format!(
            "features have dim {}, model expects {}",
            features.dim(),
            config.in_dim
        )));
    }
    let n = features.len();
    if config.batch_size > n {
        return Err(Error::Validation(format!("batch size {} exceeds {n} training rows", config.batch_size)));
    }
    let guidance = PairGuidance::new(features, stats, clusters, config.ablation)?;

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut optimizer = MomentumSgd::new(model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let m = idx.len();
            let (s, mut w) = guidance.batch(idx);
            if !config.include_diagonal {
                (0..m).for_each(|i| w[i * m + i] = 0.0);
            }
            let x = gather_rows(features, idx);
            let (loss, grads) = model.batch_gradient(&x, &s, &w)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            optimizer.step(model, &grads);
            if !model.params_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss: f64::NAN });
            }
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }

    Ok(TrainReport {
        final_loss: epoch_losses.last().copied().unwrap_or(0.0),
        epochs: epoch_losses.len(),
        epoch_losses,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HashModelConfig;

    fn toy() -> (FeatureSet, DistanceStats, ClusterAssignment) {
        let data = vec![1.0, 0.1, 0.9, 0.0, 1.0, -0.1, -0.1, 1.0, 0.0, 0.9, 0.1, 1.0];
        let fs = FeatureSet::new((0..6).map(|i| i.to_string()).collect(), 2, data).unwrap().normalized();
        let stats = DistanceStats::from_thresholds(0.01, 0.1, 0.5).unwrap();
        let clusters = ClusterAssignment::from_labels(&fs, vec![0, 0, 0, 1, 1, 1]).unwrap();
        (fs, stats, clusters)
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (fs, stats, clusters) = toy();
        let mut c = HashModelConfig::new(2, 4);
        c.learning_rate = 0.0;
        c.batch_size = 4;
        c.epochs = 5;
        let mut model = HashModel::init(c).unwrap();
        let before = model.clone();
        let report = train(&mut model, &fs, &stats, &clusters).unwrap();
        assert_eq!(model, before);
        assert_eq!(report.epochs, 5);
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let (fs, stats, clusters) = toy();
        let mut c = HashModelConfig::new(2, 4);
        c.batch_size = 7;
        let mut model = HashModel::init(c).unwrap();
        assert!(matches!(train(&mut model, &fs, &stats, &clusters), Err(Error::Validation(_))));
    }

    #[test]
    fn non_finite_parameters_report_divergence() {
        let (fs, stats, clusters) = toy();
        let mut c = HashModelConfig::new(2, 4);
        c.batch_size = 3;
        c.epochs = 3;
        let mut model = HashModel::init(c).unwrap();
        // 0 * inf on the row with a zero coordinate yields NaN.
        model.layers[0].weights[1] = f64::INFINITY;
        match train(&mut model, &fs, &stats, &clusters) {
            Err(e @ Error::Divergence { .. }) => assert_eq!(e.exit_code(), 3),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn momentum_update_rule() {
        let mut model = HashModel::init(HashModelConfig::new(1, 1)).unwrap();
        model.layers[0].weights = vec![1.0];
        let mut opt = MomentumSgd { learning_rate: 0.5, momentum: 0.9, velocity: vec![Layer::zeros(1, 1)] };
        let g = vec![Layer { fan_in: 1, fan_out: 1, weights: vec![2.0], bias: vec![0.0] }];
        opt.step(&mut model, &g);
        assert_eq!(model.layers[0].weights[0], 0.0); // v = -1
        opt.step(&mut model, &g);
        assert!((model.layers[0].weights[0] - (-1.9)).abs() < 1e-15); // v = -0.9 - 1
    }
}
