use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One convolutional block: same-padded `kernel × kernel` convolution,
/// per-channel normalization, rectifier, then `pool = [height, width]` max-pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel: usize,
    pub pool: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub conv_blocks: Vec<ConvBlock>,
    pub recurrent_layers_visual: usize,
    pub recurrent_layers_linguistic: usize,
    pub hidden_size: usize,
    pub embed_size: usize,
    /// Output size of both encoder projections, and the joint's working width.
    pub encoded_size: usize,
    /// `K`, not counting the blank.
    pub vocab_size: usize,
    pub input_height: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub layer_norm: bool,
}

impl Default for ModelConfig {
    /// Desk-scale counterpart of the single-layer setting: three conv blocks
    /// taking a 32-pixel-high line down to one row, with 4× width downsampling.
    fn default() -> Self {
        Self {
            conv_blocks: vec![
                ConvBlock {
                    out_channels: 8,
                    kernel: 3,
                    pool: [2, 2],
                },
                ConvBlock {
                    out_channels: 16,
                    kernel: 3,
                    pool: [2, 2],
                },
                ConvBlock {
                    out_channels: 32,
                    kernel: 3,
                    pool: [8, 1],
                },
            ],
            recurrent_layers_visual: 1,
            recurrent_layers_linguistic: 1,
            hidden_size: 64,
            embed_size: 32,
            encoded_size: 64,
            vocab_size: 12,
            input_height: 32,
            dropout_rate: 0.0,
            layer_norm: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("recurrent_layers_visual", self.recurrent_layers_visual),
            ("recurrent_layers_linguistic", self.recurrent_layers_linguistic),
            ("hidden_size", self.hidden_size),
            ("embed_size", self.embed_size),
            ("encoded_size", self.encoded_size),
            ("vocab_size", self.vocab_size),
            ("input_height", self.input_height),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.conv_blocks.is_empty() {
            return Err(Error::config("at least one conv block is required"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate {} must lie in [0, 1)",
                self.dropout_rate
            )));
        }
        let mut height = self.input_height;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.out_channels == 0 || b.pool[0] == 0 || b.pool[1] == 0 {
                return Err(Error::config(format!("conv block {i}: sizes must be positive")));
            }
            if b.kernel % 2 == 0 {
                return Err(Error::config(format!(
                    "conv block {i}: kernel {} must be odd for same padding",
                    b.kernel
                )));
            }
            if !height.is_multiple_of(b.pool[0]) {
                return Err(Error::config(format!(
                    "conv block {i}: height {height} is not divisible by pool height {}",
                    b.pool[0]
                )));
            }
            height /= b.pool[0];
        }
        if height != 1 {
            return Err(Error::config(format!(
                "conv stack leaves height {height}; it must collapse input_height {} to 1",
                self.input_height
            )));
        }
        Ok(())
    }

    /// Product of the pool widths.
    pub fn width_downsample(&self) -> usize {
        self.conv_blocks.iter().map(|b| b.pool[1]).product()
    }

    /// `T = ⌈W / width_downsample⌉`.
    pub fn frames_for_width(&self, width: usize) -> usize {
        width.div_ceil(self.width_downsample())
    }

    /// Channels entering the bidirectional recurrent stack.
    pub fn visual_feature_size(&self) -> usize {
        self.conv_blocks.last().map_or(1, |b| b.out_channels)
    }

    /// `K + 1`.
    pub fn classes(&self) -> usize {
        self.vocab_size + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.width_downsample(), 4);
        assert_eq!(c.frames_for_width(64), 16);
        assert_eq!(c.frames_for_width(65), 17);
    }

    #[test]
    fn stack_must_collapse_height() {
        let mut c = ModelConfig::default();
        c.conv_blocks[2].pool = [2, 2];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.conv_blocks[2].pool = [3, 2];
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_counts_rejected() {
        let mut c = ModelConfig::default();
        c.hidden_size = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.recurrent_layers_linguistic = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = serde_json::to_value(ModelConfig::default()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ModelConfig>(v).is_err());
    }
}
