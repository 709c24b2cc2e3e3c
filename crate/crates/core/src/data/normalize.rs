use serde::{Deserialize, Serialize};

use super::{ModalityDataset, PairedDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Features whose standard deviation falls below this map to zero.
pub const STD_FLOOR: f64 = 1e-12;

/// Per-feature z-score statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(features: &Tensor) -> Self {
        let (n, d) = (features.rows(), features.row_len());
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        if n == 0 {
            return Self { mean, std };
        }
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(features.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for i in 0..n {
            for ((s, v), m) in std.iter_mut().zip(features.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / n as f64).sqrt());
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, features: &Tensor) -> Result<Tensor> {
        let d = features.row_len();
        if features.rank() != 2 || d != self.dim() {
            return Err(Error::dim("normalization stats", features.shape(), &[self.dim()]));
        }
        let mut out = features.clone();
        for row in out.data_mut().chunks_mut(d.max(1)) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = if *s < STD_FLOOR { 0.0 } else { (*v - m) / s };
            }
        }
        Ok(out)
    }
}

/// Z-scores a modality table. Without `stats` they are fitted on `ds`
/// (use for the train split); with `stats` they are applied as-is.
pub fn normalize(ds: &ModalityDataset, stats: Option<&NormStats>) -> Result<ModalityDataset> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormStats::fit(&ds.features),
    };
    Ok(ModalityDataset {
        features: stats.apply(&ds.features)?,
        norm_stats: Some(stats),
        ..ds.clone()
    })
}

/// Fits statistics per modality on `train` and applies them to both splits.
pub fn normalize_paired(
    train: &PairedDataset,
    test: &PairedDataset,
) -> Result<(PairedDataset, PairedDataset, [NormStats; 2])> {
    let net = NormStats::fit(&train.net_features);
    let kernel = NormStats::fit(&train.kernel_features);
    let apply = |ds: &PairedDataset| -> Result<PairedDataset> {
        Ok(PairedDataset {
            net_features: net.apply(&ds.net_features)?,
            kernel_features: kernel.apply(&ds.kernel_features)?,
            ..ds.clone()
        })
    };
    let (tr, te) = (apply(train)?, apply(test)?);
    Ok((tr, te, [net, kernel]))
}
