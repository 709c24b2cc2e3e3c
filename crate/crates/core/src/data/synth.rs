//! Synthetic paired telemetry with a controllable dependence between the
//! class label and each modality.
//!
//! Each modality is generated as `signal + nuisance + noise`:
//!
//! - nuisance: two class-independent Gaussian factors (unit scale) along
//!   fixed random directions, so the autoencoder has structure to model
//!   beyond the label signal;
//! - noise: isotropic Gaussian with `noise_std`.
//!
//! With [`Coupling::Independent`] every modality carries a distinct class
//! centroid, so each one alone separates the three classes linearly.
//!
//! With [`Coupling::JointOnly`] each modality carries a single sign factor
//! along one direction: network `a`, kernel `b`. Benign draws `a = b` with a
//! random common sign, DoS is `(+, -)`, Recon is `(-, +)`. A single modality
//! sees `a = +` for half the benign rows and all DoS rows, so benign is never
//! the best guess and single-modality accuracy is capped at 2/3, while the
//! pair `(a, b)` identifies the class exactly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PairedDataset;
use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    Independent,
    JointOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_per_class: usize,
    pub net_dim: usize,
    pub kernel_dim: usize,
    pub coupling: Coupling,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_per_class: 2000,
            net_dim: 48,
            kernel_dim: 40,
            coupling: Coupling::JointOnly,
            noise_std: 0.1,
            seed: 7,
        }
    }
}

const SIGNAL_SCALE: f64 = 2.0;
const CENTROID_SCALE: f64 = 3.0;
const NUISANCE_FACTORS: usize = 2;

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

struct ModalityLayout {
    /// Class centroids (independent) or the single sign direction (joint).
    signal: Vec<Vec<f64>>,
    nuisance: Vec<Vec<f64>>,
}

impl ModalityLayout {
    fn new(dim: usize, coupling: Coupling, rng: &mut ChaCha8Rng) -> Self {
        let signal = match coupling {
            Coupling::Independent => (0..NUM_CLASSES)
                .map(|_| unit_vector(dim, rng).into_iter().map(|v| v * CENTROID_SCALE).collect())
                .collect(),
            Coupling::JointOnly => vec![unit_vector(dim, rng)],
        };
        let nuisance = (0..NUISANCE_FACTORS).map(|_| unit_vector(dim, rng)).collect();
        Self { signal, nuisance }
    }

    /// `sign` is only used for joint-only coupling.
    fn sample(&self, class: usize, sign: f64, noise_std: f64, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        let dim = self.nuisance[0].len();
        let base = out.len();
        out.extend((0..dim).map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            noise_std * e
        }));
        let row = &mut out[base..];
        let (dir, scale) = if self.signal.len() == 1 {
            (&self.signal[0], SIGNAL_SCALE * sign)
        } else {
            (&self.signal[class], 1.0)
        };
        for (v, d) in row.iter_mut().zip(dir) {
            *v += scale * d;
        }
        for dir in &self.nuisance {
            let r: f64 = StandardNormal.sample(rng);
            for (v, d) in row.iter_mut().zip(dir) {
                *v += r * d;
            }
        }
    }
}

/// Generates `3 · n_per_class` paired rows, grouped by class.
pub fn synth_generate(spec: &SynthSpec) -> Result<PairedDataset> {
    if spec.n_per_class < 10 {
        return Err(Error::Config(format!(
            "synthetic generation needs at least 10 samples per class, got {}",
            spec.n_per_class
        )));
    }
    if spec.net_dim == 0 || spec.kernel_dim == 0 {
        return Err(Error::Config("synthetic feature dimensions must be positive".into()));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::Config(format!("invalid noise_std {}", spec.noise_std)));
    }
    let mut rng = seed::rng(spec.seed, &[stream::SYNTH]);
    let net = ModalityLayout::new(spec.net_dim, spec.coupling, &mut rng);
    let kernel = ModalityLayout::new(spec.kernel_dim, spec.coupling, &mut rng);

    let n = NUM_CLASSES * spec.n_per_class;
    let mut net_data = Vec::with_capacity(n * spec.net_dim);
    let mut kernel_data = Vec::with_capacity(n * spec.kernel_dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..NUM_CLASSES {
        for _ in 0..spec.n_per_class {
            let (a, b) = match class {
                1 => (1.0, -1.0),
                2 => (-1.0, 1.0),
                _ => {
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    (s, s)
                }
            };
            net.sample(class, a, spec.noise_std, &mut rng, &mut net_data);
            kernel.sample(class, b, spec.noise_std, &mut rng, &mut kernel_data);
            labels.push(class);
        }
    }
    Ok(PairedDataset {
        net_features: Tensor::new(vec![n, spec.net_dim], net_data)?,
        kernel_features: Tensor::new(vec![n, spec.kernel_dim], kernel_data)?,
        labels,
        pairing_seed: spec.seed,
    })
}
