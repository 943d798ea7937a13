//! Classical layers, the Cross Residual block and the QuanvNeXt network.

mod block;
pub mod layers;
mod network;

pub use block::{BlockToggles, CrossResidualBlock, CrossResidualConfig};
pub use layers::{channel_shuffle, global_avg_pool, layer_norm, mish};
pub use network::{
    build_model, BlockSpec, ForwardTrace, ModelConfig, Preset, QuanvNeXt, Recorded, CLASSES,
};
