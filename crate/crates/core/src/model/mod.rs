//! Backbones, cross-attention fusion and the assembled network.

pub mod attention;
pub mod backbone;
pub mod config;
pub mod fusion;
pub mod mvp;

pub use attention::{cross_attention, AttentionOutput, HeadOutput, MultiHeadAttention};
pub use backbone::{Backbone, BackboneTrace};
pub use config::{BackboneConfig, FusionMode, ModelConfig, MvpConfig};
pub use fusion::{sinusoidal_encoding, FusionOutput, FusionTransformer, N_OUTPUTS};
pub use mvp::Mvp;
