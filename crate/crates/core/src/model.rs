//! The trainable hash head: stacked affine layers with `tanh` after each,
//! the weighted pairwise L2 objective over code similarities and its exact
//! gradient.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_file, CodeSet, FeatureSet, Reader};
use crate::distill::Ablation;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"DSGM";
pub const MODEL_VERSION: u32 = 1;

pub const DEFAULT_BATCH_SIZE: usize = 24;
pub const DEFAULT_LEARNING_RATE: f64 = 0.001;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashModelConfig {
    pub in_dim: usize,
    pub code_len: usize,
    /// Widths of hidden layers; empty means a single affine layer.
    pub hidden_dims: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    /// Whether the `i == j` terms take part in the loss.
    pub include_diagonal: bool,
}

impl HashModelConfig {
    pub fn new(in_dim: usize, code_len: usize) -> Self {
        Self {
            in_dim,
            code_len,
            hidden_dims: Vec::new(),
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: DEFAULT_MOMENTUM,
            epochs: 50,
            seed: 0,
            ablation: Ablation::Full,
            include_diagonal: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.in_dim == 0 {
            return fail("in_dim must be at least 1".into());
        }
        if self.code_len == 0 {
            return fail("code length must be at least 1".into());
        }
        if self.hidden_dims.contains(&0) {
            return fail("hidden layer widths must be at least 1".into());
        }
        if self.batch_size < 2 {
            return fail(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each layer in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.in_dim];
        widths.extend(&self.hidden_dims);
        widths.push(self.code_len);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One affine map `z = W x + b`; `weights` is `fan_out x fan_in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { fan_in, fan_out, weights: vec![0.0; fan_in * fan_out], bias: vec![0.0; fan_out] }
    }

    fn apply(&self, input: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.chunks_exact(self.fan_in).zip(&self.bias)) {
            *o = b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    pub config: HashModelConfig,
    pub layers: Vec<Layer>,
}

/// `tanh` of the head output for a batch: `m x code_len`, entries in `(-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedCodes {
    pub m: usize,
    pub code_len: usize,
    pub values: Vec<f64>,
}

impl RelaxedCodes {
    pub fn new(m: usize, code_len: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != m * code_len {
            return Err(Error::Validation(format!(
                "{} code values for {m} x {code_len}",
                values.len()
            )));
        }
        Ok(Self { m, code_len, values })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.code_len..(i + 1) * self.code_len]
    }
}

/// Per-parameter gradients, shaped like the model's layers.
pub type Gradients = Vec<Layer>;

impl HashModel {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init(config: HashModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
                Layer { fan_in, fan_out, weights, bias: vec![0.0; fan_out] }
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn in_dim(&self) -> usize {
        self.config.in_dim
    }

    pub fn code_len(&self) -> usize {
        self.config.code_len
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    fn check_batch(&self, batch: &[f64]) -> Result<usize> {
        let d = self.in_dim();
        if batch.len() % d != 0 {
            return Err(Error::Domain(format!("batch of {} values is not a multiple of in_dim {d}", batch.len())));
        }
        if let Some(pos) = batch.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite input at row {}, column {}", pos / d, pos % d)));
        }
        Ok(batch.len() / d)
    }

    /// Activations after each layer for one input row; the last layer's
    /// pre-activation is returned separately.
    fn forward_row(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut input = x.to_vec();
        let mut raw = Vec::new();
        for layer in &self.layers {
            let mut z = vec![0.0; layer.fan_out];
            layer.apply(&input, &mut z);
            let a: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
            raw = z;
            input = a.clone();
            acts.push(a);
        }
        (acts, raw)
    }

    /// Head outputs `F(x)` before the final `tanh`, one row per input row.
    pub fn raw_outputs(&self, batch: &[f64]) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        Ok(batch
            .par_chunks_exact(self.in_dim())
            .flat_map_iter(|x| self.forward_row(x).1)
            .collect())
    }

    /// Relaxed codes `tanh(F(x))` for a row-major batch.
    pub fn forward(&self, batch: &[f64]) -> Result<RelaxedCodes> {
        let m = self.check_batch(batch)?;
        let values = batch
            .chunks_exact(self.in_dim())
            .flat_map(|x| self.forward_row(x).0.pop().unwrap())
            .collect();
        RelaxedCodes::new(m, self.code_len(), values)
    }

    /// Exact gradient of [`batch_loss`] with respect to every parameter,
    /// together with the loss itself.
    pub fn batch_gradient(&self, batch: &[f64], s: &[f64], w: &[f64]) -> Result<(f64, Gradients)> {
        let m = self.check_batch(batch)?;
        check_pair_shape(m, s, w)?;
        let l = self.code_len();
        let acts: Vec<Vec<Vec<f64>>> = batch.chunks_exact(self.in_dim()).map(|x| self.forward_row(x).0).collect();
        let last = self.layers.len() - 1;
        let v: Vec<&[f64]> = acts.iter().map(|a| a[last].as_slice()).collect();

        // residual-weighted pair terms r_ij = w_ij (H_ij - s_ij)
        let mut loss = 0.0;
        let mut r = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let h = dot(v[i], v[j]) / l as f64;
                let res = h - s[i * m + j];
                loss += w[i * m + j] * res * res;
                r[i * m + j] = w[i * m + j] * res;
            }
        }
        let scale = 1.0 / (m * m) as f64;
        loss *= scale;

        // dL/dv_i = (2 / (m^2 L)) sum_j (r_ij + r_ji) v_j
        let coeff = 2.0 * scale / l as f64;
        let mut delta: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut g = vec![0.0; l];
                for j in 0..m {
                    let c = coeff * (r[i * m + j] + r[j * m + i]);
                    if c != 0.0 {
                        g.iter_mut().zip(v[j]).for_each(|(g, vj)| *g += c * vj);
                    }
                }
                g.iter_mut().zip(v[i]).for_each(|(g, vi)| *g *= 1.0 - vi * vi);
                g
            })
            .collect();

        let mut grads: Gradients = self.layers.iter().map(|ly| Layer::zeros(ly.fan_in, ly.fan_out)).collect();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let grad = &mut grads[k];
            for (i, d) in delta.iter().enumerate() {
                let input: &[f64] = if k == 0 {
                    &batch[i * self.in_dim()..(i + 1) * self.in_dim()]
                } else {
                    &acts[i][k - 1]
                };
                for (o, &dz) in d.iter().enumerate() {
                    grad.bias[o] += dz;
                    if dz != 0.0 {
                        grad.weights[o * layer.fan_in..(o + 1) * layer.fan_in]
                            .iter_mut()
                            .zip(input)
                            .for_each(|(g, x)| *g += dz * x);
                    }
                }
            }
            if k > 0 {
                delta = delta
                    .iter()
                    .enumerate()
                    .map(|(i, d)| {
                        let prev = &acts[i][k - 1];
                        (0..layer.fan_in)
                            .map(|c| {
                                let back: f64 = d.iter().enumerate().map(|(o, dz)| dz * layer.weights[o * layer.fan_in + c]).sum();
                                back * (1.0 - prev[c] * prev[c])
                            })
                            .collect()
                    })
                    .collect();
            }
        }
        Ok((loss, grads))
    }

    /// Packs `sign(F(x))` per row, with `sign(0) = +1`.
    pub fn encode(&self, features: &FeatureSet) -> Result<CodeSet> {
        if features.dim() != self.in_dim() {
            return Err(Error::Validation(format!(
                "features have dim {}, model expects {}",
                features.dim(),
                self.in_dim()
            )));
        }
        let raw = self.raw_outputs(features.data())?;
        CodeSet::from_signs(features.ids().to_vec(), self.code_len(), &raw)
    }

    pub fn params_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut buf = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        let put_u64 = |buf: &mut Vec<u8>, v: u64| buf.extend_from_slice(&v.to_le_bytes());
        put_u64(&mut buf, c.in_dim as u64);
        put_u64(&mut buf, c.code_len as u64);
        put_u64(&mut buf, c.hidden_dims.len() as u64);
        for &h in &c.hidden_dims {
            put_u64(&mut buf, h as u64);
        }
        put_u64(&mut buf, c.batch_size as u64);
        buf.extend_from_slice(&c.learning_rate.to_le_bytes());
        buf.extend_from_slice(&c.momentum.to_le_bytes());
        put_u64(&mut buf, c.epochs as u64);
        put_u64(&mut buf, c.seed);
        buf.push(c.ablation.code());
        buf.push(u8::from(c.include_diagonal));
        put_u64(&mut buf, self.layers.len() as u64);
        for layer in &self.layers {
            put_u64(&mut buf, layer.fan_out as u64);
            put_u64(&mut buf, layer.fan_in as u64);
            for v in layer.weights.iter().chain(&layer.bias) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |msg: &str| Error::Format(format!("model checkpoint: {msg}"));
        let mut r = Reader::new(bytes);
        let take = |r: &mut Reader, n: usize| r.take(n).map_err(|_| fmt("truncated")).map(<[u8]>::to_vec);
        if take(&mut r, 4)? != MODEL_MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = r.u32().map_err(|_| fmt("truncated"))?;
        if version != MODEL_VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let u64_ = |r: &mut Reader| r.u64().map(|v| v as usize).map_err(|_| fmt("truncated"));
        let in_dim = u64_(&mut r)?;
        let code_len = u64_(&mut r)?;
        let n_hidden = u64_(&mut r)?;
        if n_hidden > bytes.len() / 8 {
            return Err(fmt("truncated"));
        }
        let hidden_dims = (0..n_hidden).map(|_| u64_(&mut r)).collect::<Result<Vec<_>>>()?;
        let batch_size = u64_(&mut r)?;
        let learning_rate = r.f64().map_err(|_| fmt("truncated"))?;
        let momentum = r.f64().map_err(|_| fmt("truncated"))?;
        let epochs = u64_(&mut r)?;
        let seed = r.u64().map_err(|_| fmt("truncated"))?;
        let flags = take(&mut r, 2)?;
        let ablation = Ablation::from_code(flags[0]).ok_or_else(|| fmt("bad ablation code"))?;
        let include_diagonal = match flags[1] {
            0 => false,
            1 => true,
            _ => return Err(fmt("bad diagonal flag")),
        };
        let config = HashModelConfig {
            in_dim,
            code_len,
            hidden_dims,
            batch_size,
            learning_rate,
            momentum,
            epochs,
            seed,
            ablation,
            include_diagonal,
        };
        config.validate()?;
        let n_layers = u64_(&mut r)?;
        let shapes = config.layer_shapes();
        if n_layers != shapes.len() {
            return Err(fmt("layer count does not match config"));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (fan_in, fan_out) in shapes {
            if u64_(&mut r)? != fan_out || u64_(&mut r)? != fan_in {
                return Err(fmt("layer shape does not match config"));
            }
            let raw = take(&mut r, (fan_in * fan_out + fan_out) * 8)?;
            let mut values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
            let weights = values.by_ref().take(fan_in * fan_out).collect();
            let bias = values.collect();
            layers.push(Layer { fan_in, fan_out, weights, bias });
        }
        r.finish().map_err(|_| fmt("trailing bytes"))?;
        let model = Self { config, layers };
        if !model.params_finite() {
            return Err(fmt("non-finite parameter"));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pair_shape(m: usize, s: &[f64], w: &[f64]) -> Result<()> {
    if s.len() != m * m || w.len() != m * m {
        return Err(Error::Validation(format!(
            "pair matrices must be {m} x {m}, got {} and {} entries",
            s.len(),
            w.len()
        )));
    }
    Ok(())
}

/// `(1/L) * v_i . v_j`.
pub fn code_similarity(v_i: &[f64], v_j: &[f64]) -> f64 {
    dot(v_i, v_j) / v_i.len() as f64
}

/// `(1/m^2) * sum_ij w_ij (H_ij - s_ij)^2`, diagonal included.
pub fn batch_loss(v: &RelaxedCodes, s: &[f64], w: &[f64]) -> Result<f64> {
    let m = v.m;
    check_pair_shape(m, s, w)?;
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let res = code_similarity(v.row(i), v.row(j)) - s[i * m + j];
            total += w[i * m + j] * res * res;
        }
    }
    Ok(total / (m * m) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(in_dim: usize, code_len: usize, hidden: &[usize], seed: u64) -> HashModel {
        let mut c = HashModelConfig::new(in_dim, code_len);
        c.hidden_dims = hidden.to_vec();
        c.seed = seed;
        HashModel::init(c).unwrap()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let m = model(4096, 64, &[], 1);
        assert_eq!(m.layers.len(), 1);
        assert_eq!((m.layers[0].fan_in, m.layers[0].fan_out), (4096, 64));
        let bound = 1.0 / 64.0;
        assert!(m.layers[0].weights.iter().all(|w| w.abs() <= bound));
        assert!(m.layers[0].bias.iter().all(|&b| b == 0.0));
        assert_eq!(m, model(4096, 64, &[], 1));
        assert_ne!(m, model(4096, 64, &[], 2));

        let m = model(4096, 64, &[1024], 1);
        let shapes: Vec<_> = m.layers.iter().map(|l| (l.fan_in, l.fan_out)).collect();
        assert_eq!(shapes, vec![(4096, 1024), (1024, 64)]);
    }

    #[test]
    fn config_validation() {
        let mut c = HashModelConfig::new(4, 8);
        c.batch_size = 1;
        assert!(c.validate().is_err());
        c.batch_size = 2;
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        c.momentum = 0.0;
        c.learning_rate = -1.0;
        assert!(c.validate().is_err());
        c.learning_rate = 0.0;
        c.validate().unwrap();
        c.code_len = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_model_gives_zero_codes() {
        let mut m = model(3, 4, &[], 0);
        m.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
        let v = m.forward(&[1.0, -2.0, 3.0, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(v.values, vec![0.0; 8]);
    }

    #[test]
    fn saturated_outputs_stay_inside_unit_interval() {
        let mut m = model(2, 2, &[], 0);
        m.layers[0].weights = vec![15.0, 0.0, 0.0, -15.0];
        let v = m.forward(&[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(v.values.iter().all(|x| x.abs() < 1.0));
        assert!(v.values[0] > 0.999_999 && v.values[3] < -0.999_999);
    }

    #[test]
    fn forward_rejects_non_finite_and_ragged_input() {
        let m = model(2, 2, &[], 0);
        assert!(matches!(m.forward(&[1.0, f64::NAN]), Err(Error::Domain(_))));
        assert!(matches!(m.forward(&[1.0, 2.0, 3.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn similarity_cases() {
        assert_eq!(code_similarity(&[1.0; 8], &[1.0; 8]), 1.0);
        assert_eq!(code_similarity(&[1.0; 8], &[-1.0; 8]), -1.0);
        assert_eq!(code_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn loss_hand_cases() {
        let perfect = RelaxedCodes::new(2, 1, vec![1.0, 1.0]).unwrap();
        assert_eq!(batch_loss(&perfect, &[1.0; 4], &[1.0; 4]).unwrap(), 0.0);
        let split = RelaxedCodes::new(2, 1, vec![1.0, -1.0]).unwrap();
        assert_eq!(batch_loss(&split, &[1.0; 4], &[1.0; 4]).unwrap(), 2.0);
        assert!(batch_loss(&split, &[1.0; 3], &[1.0; 4]).is_err());
    }

    #[test]
    fn zero_weights_or_zero_residual_give_zero_gradient() {
        let m = model(3, 2, &[4], 5);
        let x = [0.3, -0.1, 0.8, -0.5, 0.2, 0.1];
        let (loss, g) = m.batch_gradient(&x, &[1.0, -1.0, -1.0, 1.0], &[0.0; 4]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|l| l.weights.iter().chain(&l.bias).all(|&v| v == 0.0)));

        // s set to the model's own H
        let v = m.forward(&x).unwrap();
        let h: Vec<f64> = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| code_similarity(v.row(i), v.row(j))).collect();
        let (loss, g) = m.batch_gradient(&x, &h, &[1.0; 4]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|l| l.weights.iter().chain(&l.bias).all(|&v| v == 0.0)));
    }

    #[test]
    fn encode_sign_rule() {
        let mut m = model(3, 8, &[], 0);
        // rows pick out input coordinates so F(x) is a known vector
        m.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
        m.layers[0].weights[0] = 1.0; // out 0 <- x0
        m.layers[0].weights[3 + 1] = 1.0; // out 1 <- x1
        m.layers[0].weights[2 * 3 + 2] = 1.0; // out 2 <- x2
        m.layers[0].bias = vec![0.0, 0.0, 0.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let fs = FeatureSet::new(vec!["q".into(), "r".into()], 3, vec![0.3, -0.2, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let codes = m.encode(&fs).unwrap();
        assert_eq!(&codes.signs(0)[..3], &[1, -1, 1]);
        assert_eq!(codes, m.encode(&fs).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let mut m = model(5, 12, &[7, 3], 9);
        m.config.ablation = Ablation::V1;
        m.config.include_diagonal = false;
        let bytes = m.to_bytes();
        assert_eq!(HashModel::from_bytes(&bytes).unwrap(), m);
        assert!(HashModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(HashModel::from_bytes(&bad), Err(Error::Format(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(HashModel::from_bytes(&extra).is_err());
    }
}
