//! 1D CNN attack classifier.
//!
//! ```text
//! [batch × L] → reshape [batch × 1 × L]
//!   → conv(F1, M1) → ReLU → maxpool(w)
//!   → conv(F2, M2) → ReLU → maxpool(w)
//!   → flatten → dense(3) → softmax
//! ```
//!
//! With the defaults (L = 64, F1 = 16, M1 = 5, F2 = 32, M2 = 3, w = 2) the
//! lengths go 64 → 60 → 30 → 28 → 14 and the head sees 448 features.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::checkpoint::{quantize_f32, Checkpoint};
use crate::encoder::FUSED_DIM;
use crate::error::{Error, Result};
use crate::nn::{ops, Layer, Optimizer, OptimizerKind, Sequential};
use crate::seed::{self, stream};
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub input_len: usize,
    pub filters1: usize,
    pub kernel1: usize,
    pub filters2: usize,
    pub kernel2: usize,
    pub pool: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            input_len: FUSED_DIM,
            filters1: 16,
            kernel1: 5,
            filters2: 32,
            kernel2: 3,
            pool: 2,
        }
    }
}

impl CnnConfig {
    /// Length after each stage: `[conv1, pool1, conv2, pool2]`.
    pub fn stage_lengths(&self) -> Result<[usize; 4]> {
        let c1 = ops::conv1d_output_len(self.input_len, self.kernel1, 1)?;
        let p1 = pooled(c1, self.pool)?;
        let c2 = ops::conv1d_output_len(p1, self.kernel2, 1)?;
        let p2 = pooled(c2, self.pool)?;
        Ok([c1, p1, c2, p2])
    }

    pub fn flattened_len(&self) -> Result<usize> {
        Ok(self.filters2 * self.stage_lengths()?[3])
    }

    pub fn param_count(&self) -> Result<usize> {
        let conv1 = self.filters1 * self.kernel1 + self.filters1;
        let conv2 = self.filters2 * self.filters1 * self.kernel2 + self.filters2;
        let dense = self.flattened_len()? * NUM_CLASSES + NUM_CLASSES;
        Ok(conv1 + conv2 + dense)
    }

    fn to_header(self) -> Map<String, Value> {
        match serde_json::to_value(self).expect("plain struct") {
            Value::Object(m) => m,
            _ => unreachable!(),
        }
    }
}

fn pooled(len: usize, window: usize) -> Result<usize> {
    if window == 0 || window > len {
        return Err(Error::EmptyOutput { window, length: len });
    }
    Ok(len / window)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    config: CnnConfig,
    net: Sequential,
}

impl CnnModel {
    pub fn new(config: CnnConfig, init_seed: u64) -> Result<Self> {
        if [config.filters1, config.filters2, config.kernel1, config.kernel2].contains(&0) {
            return Err(Error::Config(format!("invalid CNN config {config:?}")));
        }
        let flat = config.flattened_len()?;
        let mut rng = seed::rng(init_seed, &[stream::CNN_INIT]);
        let net = Sequential::new(vec![
            Layer::reshape(vec![1, config.input_len]),
            Layer::conv1d("conv1", 1, config.filters1, config.kernel1, &mut rng),
            Layer::relu(),
            Layer::maxpool1d(config.pool),
            Layer::conv1d("conv2", config.filters1, config.filters2, config.kernel2, &mut rng),
            Layer::relu(),
            Layer::maxpool1d(config.pool),
            Layer::reshape(vec![flat]),
            Layer::dense("head", flat, NUM_CLASSES, &mut rng),
        ]);
        Ok(Self { config, net })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn net(&self) -> &Sequential {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Sequential {
        &mut self.net
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.net.flat_params()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        self.net.load_flat(flat)
    }

    fn check_input(&self, z: &Tensor) -> Result<()> {
        if z.rank() != 2 || z.shape()[1] != self.config.input_len {
            return Err(Error::dim("CNN input", z.shape(), &[z.rows(), self.config.input_len]));
        }
        Ok(())
    }

    pub fn logits(&self, z: &Tensor) -> Result<Tensor> {
        self.check_input(z)?;
        self.net.infer(z)
    }

    /// Class probabilities, `batch × 3`.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        ops::softmax(&self.logits(z)?)
    }

    /// Argmax class per row; ties go to the lowest class index.
    pub fn predict(&self, z: &Tensor) -> Result<Vec<usize>> {
        Ok(ops::argmax_rows(&self.forward(z)?))
    }

    /// Mean cross-entropy on a batch and its gradient, accumulated into the
    /// parameter gradients.
    pub fn loss_and_grad(&mut self, z: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        self.check_input(z)?;
        let y = ops::one_hot(labels, NUM_CLASSES)?;
        let probs = ops::softmax(&self.net.forward(z)?)?;
        let loss = ops::cross_entropy_loss(&probs, &y)?;
        let grad = ops::softmax_cross_entropy_backward(&probs, &y)?;
        self.net.backward(&grad)?;
        Ok((loss, probs))
    }

    pub fn quantize_f32(&mut self) {
        let mut flat = self.flat_params();
        quantize_f32(&mut flat);
        self.load_flat(&flat).expect("same length");
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut header = self.config.to_header();
        header.insert("arch".into(), "cnn1d".into());
        let tensors = self
            .net
            .params()
            .into_iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        Checkpoint::new(header, tensors)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.header_str("arch")? != "cnn1d" {
            return Err(Error::Checkpoint(format!(
                "expected cnn1d, found {}",
                ck.header_str("arch")?
            )));
        }
        let config: CnnConfig = serde_json::from_value(Value::Object(ck.header.clone()))
            .map_err(|e| Error::Checkpoint(format!("bad CNN header: {e}")))?;
        let mut model = Self::new(config, 0)?;
        for p in model.net.params_mut() {
            let t = ck.tensor(&p.name)?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{}' has shape {:?}",
                    p.name,
                    t.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 32,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Percent of training rows classified correctly during the epoch.
    pub accuracy: f64,
    pub steps: usize,
}

/// Number of optimizer steps for `epochs` passes over `n` rows.
pub fn minibatch_steps(n: usize, batch: usize, epochs: usize) -> usize {
    epochs * n.div_ceil(batch.max(1))
}

/// Minibatch training with a fresh optimizer. Row order in each epoch is a
/// seeded shuffle, so the loss curve is a pure function of the inputs.
pub fn train_epochs(
    model: &mut CnnModel,
    z: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<EpochStats>> {
    if labels.is_empty() {
        return Err(Error::Training("no training rows".into()));
    }
    if z.rows() != labels.len() {
        return Err(Error::dim("training rows vs labels", z.shape(), &[labels.len()]));
    }
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(Error::Training(format!("invalid schedule {cfg:?}")));
    }
    model.check_input(z)?;
    let n = labels.len();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::rng(seed, &[stream::CNN_SHUFFLE, epoch as u64]));
        let (mut total_loss, mut correct, mut steps) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let xb = z.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, probs) = model.loss_and_grad(&xb, &yb)?;
            total_loss += loss * chunk.len() as f64;
            correct += ops::argmax_rows(&probs).iter().zip(&yb).filter(|(p, y)| p == y).count();
            opt.step(&mut model.net)?;
            steps += 1;
        }
        history.push(EpochStats {
            epoch,
            loss: total_loss / n as f64,
            accuracy: 100.0 * correct as f64 / n as f64,
            steps,
        });
    }
    model.net.clear_cache();
    Ok(history)
}
