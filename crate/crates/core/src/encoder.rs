//! Per-modality autoencoders and latent fusion.
//!
//! Each modality is compressed by its own autoencoder
//! `d → hidden → 32 → hidden → d` (ReLU on hidden and latent units, linear
//! reconstruction). Only the encoder half is used after training. Training
//! sees feature rows and nothing else.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::checkpoint::{quantize_f32, Checkpoint};
use crate::data::Modality;
use crate::error::{Error, Result};
use crate::nn::{ops, Layer, Optimizer, OptimizerKind, Sequential};
use crate::seed::{self, stream};
use crate::tensor::Tensor;

pub const LATENT_DIM: usize = 32;
pub const FUSED_DIM: usize = 2 * LATENT_DIM;

/// Layers `[dense, relu, dense, relu]` form the encoder.
const ENCODER_LAYERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 10,
            batch: 32,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub modality: Modality,
    input_dim: usize,
    hidden: usize,
    net: Sequential,
}

impl AutoencoderModel {
    /// Glorot-initialized autoencoder; weights depend only on `init_seed`.
    pub fn new(modality: Modality, input_dim: usize, hidden: usize, init_seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::Config(format!(
                "autoencoder dimensions must be positive (d={input_dim}, hidden={hidden})"
            )));
        }
        let mut rng = seed::rng(init_seed, &[stream::AE_INIT]);
        let net = Sequential::new(vec![
            Layer::dense("enc1", input_dim, hidden, &mut rng),
            Layer::relu(),
            Layer::dense("enc2", hidden, LATENT_DIM, &mut rng),
            Layer::relu(),
            Layer::dense("dec1", LATENT_DIM, hidden, &mut rng),
            Layer::relu(),
            Layer::dense("dec2", hidden, input_dim, &mut rng),
        ]);
        Ok(Self {
            modality,
            input_dim,
            hidden,
            net,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn latent_dim(&self) -> usize {
        LATENT_DIM
    }

    pub fn net(&self) -> &Sequential {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Sequential {
        &mut self.net
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.net.infer(x)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.shape()[1] != self.input_dim {
            return Err(Error::dim("autoencoder input", x.shape(), &[x.rows(), self.input_dim]));
        }
        Ok(())
    }

    pub fn quantize_f32(&mut self) {
        let mut flat = self.net.flat_params();
        quantize_f32(&mut flat);
        self.net.load_flat(&flat).expect("same length");
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut header = Map::new();
        header.insert("arch".into(), "autoencoder".into());
        header.insert("modality".into(), self.modality.tag().into());
        header.insert("latent_dim".into(), LATENT_DIM.into());
        header.insert("d".into(), self.input_dim.into());
        header.insert("h".into(), self.hidden.into());
        let tensors = self
            .net
            .params()
            .into_iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        Checkpoint::new(header, tensors)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.header_str("arch")? != "autoencoder" {
            return Err(Error::Checkpoint(format!(
                "expected autoencoder, found {}",
                ck.header_str("arch")?
            )));
        }
        let modality = Modality::from_tag(ck.header_str("modality")?)
            .ok_or_else(|| Error::Checkpoint("unknown modality".into()))?;
        if ck.header_usize("latent_dim")? != LATENT_DIM {
            return Err(Error::Checkpoint("latent_dim mismatch".into()));
        }
        let mut model = Self::new(modality, ck.header_usize("d")?, ck.header_usize("h")?, 0)?;
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

#[derive(Debug, Clone, PartialEq)]
pub struct AeTrainOutput {
    pub model: AutoencoderModel,
    /// Mean reconstruction MSE per epoch.
    pub loss_history: Vec<f64>,
    /// Latents of the training rows under the final parameters.
    pub final_latents: Tensor,
    pub warnings: Vec<String>,
}

/// Trains an autoencoder with MSE and Adam. `init_seed` fixes the initial
/// weights and `shuffle_seed` the minibatch order.
pub fn train_autoencoder(
    features: &Tensor,
    modality: Modality,
    config: &AeConfig,
    init_seed: u64,
    shuffle_seed: u64,
) -> Result<AeTrainOutput> {
    if features.rank() != 2 || features.shape()[1] == 0 {
        return Err(Error::dim("autoencoder training data", features.shape(), &[0, 1]));
    }
    let (n, d) = (features.rows(), features.shape()[1]);
    if n == 0 || config.batch == 0 {
        return Err(Error::Training(format!("cannot train autoencoder on {n} rows")));
    }
    let mut warnings = Vec::new();
    if d < LATENT_DIM {
        warnings.push(format!(
            "{} input has {d} features, fewer than the {LATENT_DIM}-wide latent space",
            modality.tag()
        ));
    }
    let mut model = AutoencoderModel::new(modality, d, config.hidden, init_seed)?;
    let mut opt = Optimizer::new(OptimizerKind::Adam, config.lr);
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut seed::rng(shuffle_seed, &[stream::AE_SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        for chunk in order.chunks(config.batch) {
            let x = features.select_rows(chunk);
            let recon = model.net.forward(&x)?;
            total += ops::mse_loss(&recon, &x)? * chunk.len() as f64;
            let grad = ops::mse_backward(&recon, &x)?;
            model.net.backward(&grad)?;
            opt.step(&mut model.net)?;
        }
        loss_history.push(total / n as f64);
    }
    model.net.clear_cache();
    if !smoothed_non_increasing(&loss_history) {
        warnings.push(format!("{} autoencoder loss did not decrease steadily", modality.tag()));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let final_latents = encode(&model, features)?;
    Ok(AeTrainOutput {
        model,
        loss_history,
        final_latents,
        warnings,
    })
}

/// Checks a 3-epoch moving average never rises by more than 1%.
fn smoothed_non_increasing(history: &[f64]) -> bool {
    let smooth: Vec<f64> = history.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    smooth.windows(2).all(|w| w[1] <= w[0] * 1.01)
}

/// Maps `n × d` features to `n × 32` latents through the encoder half.
pub fn encode(model: &AutoencoderModel, x: &Tensor) -> Result<Tensor> {
    model.check_input(x)?;
    model.net.infer_prefix(x, ENCODER_LAYERS)
}

/// Row-wise concatenation, network latents first.
pub fn fuse(z_net: &Tensor, z_kernel: &Tensor) -> Result<Tensor> {
    for z in [z_net, z_kernel] {
        if z.rank() != 2 || z.shape()[1] != LATENT_DIM {
            return Err(Error::dim("latent block", z.shape(), &[z.rows(), LATENT_DIM]));
        }
    }
    if z_net.rows() != z_kernel.rows() {
        return Err(Error::dim("fusion row counts", z_net.shape(), z_kernel.shape()));
    }
    Tensor::hconcat(z_net, z_kernel)
}

/// Inverse of [`fuse`].
pub fn unfuse(z: &Tensor) -> Result<(Tensor, Tensor)> {
    if z.rank() != 2 || z.shape()[1] != FUSED_DIM {
        return Err(Error::dim("fused block", z.shape(), &[z.rows(), FUSED_DIM]));
    }
    z.hsplit(LATENT_DIM)
}
