use serde::{Deserialize, Serialize};

use crate::data::{PHYSIO_WIDTH, VIDEO_WIDTH};
use crate::error::{Error, Result};

/// Which token streams feed the fusion transformer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Physio tokens query video tokens.
    Fused,
    /// Video tokens as both queries and keys/values.
    VideoOnly,
    /// Physio tokens as both queries and keys/values.
    PhysioOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Fused, FusionMode::VideoOnly, FusionMode::PhysioOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Fused => "fused",
            FusionMode::VideoOnly => "video_only",
            FusionMode::PhysioOnly => "physio_only",
        }
    }

    pub fn uses_video(self) -> bool {
        self != FusionMode::PhysioOnly
    }

    pub fn uses_physio(self) -> bool {
        self != FusionMode::VideoOnly
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}' (expected fused, video_only or physio_only)")))
    }
}

/// 1D-CNN followed by a dense time reduction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// `(out_channels, kernel_len)` per convolution.
    pub conv_layers: Vec<(usize, usize)>,
    pub feature_dim: usize,
    pub token_count: usize,
    pub input_time_max: usize,
    pub input_channels: usize,
}

impl BackboneConfig {
    pub fn physio(tp_max: usize) -> Self {
        Self {
            conv_layers: vec![(64, 7), (256, 7), (512, 7)],
            feature_dim: 512,
            token_count: 100,
            input_time_max: tp_max,
            input_channels: PHYSIO_WIDTH,
        }
    }

    pub fn video(tv_max: usize) -> Self {
        Self {
            conv_layers: vec![(128, 5), (512, 5)],
            feature_dim: 512,
            token_count: 100,
            input_time_max: tv_max,
            input_channels: VIDEO_WIDTH,
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let last = self.conv_layers.last().ok_or_else(|| Error::Config(format!("{name}: no convolution layers")))?;
        if last.0 != self.feature_dim {
            return Err(Error::Config(format!("{name}: last conv width {} != feature_dim {}", last.0, self.feature_dim)));
        }
        for &(c, k) in &self.conv_layers {
            if c == 0 || k % 2 == 0 {
                return Err(Error::Config(format!("{name}: conv ({c}, {k}) needs positive width and odd kernel")));
            }
        }
        if self.token_count == 0 || self.token_count >= self.input_time_max {
            return Err(Error::Config(format!(
                "{name}: token_count {} must be in [1, input_time_max {})",
                self.token_count, self.input_time_max
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::Config(format!("{name}: input_channels must be positive")));
        }
        Ok(())
    }
}

/// Cross-attention fusion transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_heads: usize,
    pub n_layers: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub token_count: usize,
    pub use_positional_encoding: bool,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_heads: 8,
            n_layers: 8,
            model_dim: 512,
            ffn_dim: 1024,
            token_count: 100,
            use_positional_encoding: true,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.model_dim == 0 || self.model_dim % self.n_heads != 0 {
            return Err(Error::Config(format!("model_dim {} not divisible by n_heads {}", self.model_dim, self.n_heads)));
        }
        if self.n_layers == 0 || self.ffn_dim == 0 || self.token_count == 0 {
            return Err(Error::Config("n_layers, ffn_dim and token_count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Complete network description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvpConfig {
    pub model: ModelConfig,
    pub video: BackboneConfig,
    pub physio: BackboneConfig,
    pub mode: FusionMode,
}

impl MvpConfig {
    /// Full-size network for the given sequence caps.
    pub fn full(tv_max: usize, tp_max: usize) -> Self {
        Self {
            model: ModelConfig::default(),
            video: BackboneConfig::video(tv_max),
            physio: BackboneConfig::physio(tp_max),
            mode: FusionMode::Fused,
        }
    }

    /// One head, one layer, width 8, four tokens.
    pub fn tiny(tv_max: usize, tp_max: usize) -> Self {
        let model = ModelConfig {
            n_heads: 1,
            n_layers: 1,
            model_dim: 8,
            ffn_dim: 16,
            token_count: 4,
            use_positional_encoding: true,
            dropout: 0.0,
        };
        let backbone = |channels, time| BackboneConfig {
            conv_layers: vec![(8, 3)],
            feature_dim: 8,
            token_count: 4,
            input_time_max: time,
            input_channels: channels,
        };
        Self { model, video: backbone(VIDEO_WIDTH, tv_max), physio: backbone(PHYSIO_WIDTH, tp_max), mode: FusionMode::Fused }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for (name, b) in [("video", &self.video), ("physio", &self.physio)] {
            b.validate(name)?;
            if b.feature_dim != self.model.model_dim {
                return Err(Error::Config(format!("{name}.feature_dim {} != model_dim {}", b.feature_dim, self.model.model_dim)));
            }
            if b.token_count != self.model.token_count {
                return Err(Error::Config(format!("{name}.token_count {} != token_count {}", b.token_count, self.model.token_count)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        let c = MvpConfig::full(2_800, 19_900);
        c.validate().unwrap();
        assert_eq!(c.model.head_dim(), 64);
        MvpConfig::tiny(10, 12).validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let mut c = MvpConfig::full(2_800, 19_900);
        c.model.n_heads = 7;
        assert_eq!(c.validate().unwrap_err().category(), "config");
        let mut c = MvpConfig::full(2_800, 19_900);
        c.physio.conv_layers = vec![(64, 6), (512, 7)];
        assert!(c.validate().is_err());
        let mut c = MvpConfig::full(2_800, 19_900);
        c.video.conv_layers.push((256, 5));
        assert!(c.validate().is_err());
        assert!(MvpConfig::full(100, 19_900).validate().is_err());
    }

    #[test]
    fn mode_parsing() {
        for m in FusionMode::ALL {
            assert_eq!(m.as_str().parse::<FusionMode>().unwrap(), m);
        }
        assert_eq!("both".parse::<FusionMode>().unwrap_err().category(), "config");
    }
}
