//! Convolutional sensor networks: forward pass with per-block taps,
//! reverse-mode gradients of the SSE loss, and Adam training.

mod layers;
mod model;
mod train;

pub use layers::{activate, convolve, pool, sigmoid, Activation, ConvOperator, PoolKind};
pub use model::{
    sse_loss, Architecture, BlockTaps, CnnModel, ConvBlock, ConvBlockSpec, DenseActivation, DenseLayer, Forward,
    Gradients,
};
pub use train::{lr_sweep, mean_sse, train, Adam, EpochRecord, TrainConfig, TrainOutcome};
