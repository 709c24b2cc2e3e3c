//! Minimal numerical engine: layer kernels, a layer stack with cached
//! reverse-mode gradients, losses and optimizers.

pub mod layer;
pub mod ops;
pub mod optim;

pub use layer::{glorot_uniform, Layer, ParamTensor, Sequential};
pub use ops::{
    argmax_rows, conv1d_forward, cross_entropy_loss, dense_forward, maxpool1d_forward, mse_loss, one_hot, relu, softmax,
};
pub use optim::{AdamConfig, AdamState, Optimizer, OptimizerKind};
