//! Dataset handling: per-modality tables, multimodal pairing, stratified
//! splits, client partitioning and a synthetic generator.

mod ingest;
mod normalize;
mod pairing;
mod partition;
mod synth;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::NUM_CLASSES;

pub use ingest::{load_csv, load_csv_many, CsvSchema, IngestReport};
pub use normalize::{normalize, normalize_paired, NormStats, STD_FLOOR};
pub use pairing::{pair_modalities, split};
pub use partition::{partition_clients, ClientShard, PartitionScheme};
pub use synth::{synth_generate, Coupling, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    NetworkTraffic,
    KernelHpc,
}

impl Modality {
    pub fn tag(self) -> &'static str {
        match self {
            Modality::NetworkTraffic => "network",
            Modality::KernelHpc => "kernel",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "network" => Some(Modality::NetworkTraffic),
            "kernel" => Some(Modality::KernelHpc),
            _ => None,
        }
    }
}

pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["Benign", "DoS", "Recon"];

/// One modality's feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityDataset {
    pub modality: Modality,
    /// `n × d`
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub norm_stats: Option<NormStats>,
}

impl ModalityDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        class_counts(&self.labels)
    }
}

/// Row-aligned samples from both modalities. Row `i` of each table carries
/// `labels[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub net_features: Tensor,
    pub kernel_features: Tensor,
    pub labels: Vec<usize>,
    pub pairing_seed: u64,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn net_dim(&self) -> usize {
        self.net_features.shape()[1]
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel_features.shape()[1]
    }

    pub fn features(&self, modality: Modality) -> &Tensor {
        match modality {
            Modality::NetworkTraffic => &self.net_features,
            Modality::KernelHpc => &self.kernel_features,
        }
    }

    pub fn select(&self, indices: &[usize]) -> PairedDataset {
        PairedDataset {
            net_features: self.net_features.select_rows(indices),
            kernel_features: self.kernel_features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            pairing_seed: self.pairing_seed,
        }
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        class_counts(&self.labels)
    }
}

pub fn class_counts(labels: &[usize]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

/// Indices of each class, in ascending order.
pub(crate) fn indices_by_class(labels: &[usize]) -> [Vec<usize>; NUM_CLASSES] {
    let mut out: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, &y) in labels.iter().enumerate() {
        out[y].push(i);
    }
    out
}
