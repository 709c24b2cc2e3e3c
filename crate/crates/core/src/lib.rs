//! Federated multimodal intrusion detection for EV charging stations.
//!
//! Two telemetry modalities (network-flow features and kernel/HPC
//! counters) are each compressed by a local autoencoder to 32 latent
//! features, concatenated into a 64-wide fused vector, and classified
//! (Benign / DoS / Recon) by a small 1D CNN. The CNN is trained either
//! centrally or across simulated charging stations with sample-weighted
//! parameter averaging.
//!
//! Module map:
//!
//! - [`nn`]: tensors, layers, losses, gradients, Adam
//! - [`data`]: CSV ingestion, normalization, pairing, splits, client shards, synthetic data
//! - [`encoder`]: per-modality autoencoders and latent fusion
//! - [`classifier`]: the 1D CNN
//! - [`fed`]: local updates, weighted aggregation, federated and centralized runs
//! - [`metrics`]: confusion matrices and the evaluation report
//! - [`experiment`]: end-to-end pipelines and the experiment protocols used by the CLI

pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod fed;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Number of traffic classes: Benign, DoS, Recon.
pub const NUM_CLASSES: usize = 3;
