//! 1D U-Net encoder–decoder with an analytic backward pass.

pub mod layers;
mod params;
mod unet;

pub use layers::{ConvWeights, FeatureMap};
pub use params::{init_params, BnStats, CbrWeights, UNetConfig, UNetParams, Weights};
pub use unet::{backward, denoise, forward, infer_segments, stack, unstack, update_running_stats, ForwardCache, Mode};
