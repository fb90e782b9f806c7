use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::SPECIAL_TOKENS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// Per-stream video feature width (RGB and flow each).
    pub d_v: usize,
    /// Audio feature width.
    pub d_a: usize,
    pub dropout: f32,
}

impl ModelConfig {
    /// Laptop-scale defaults: 2 layers, 64 hidden, 4 heads, 40-dim features.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            n_layers: 2,
            hidden: 64,
            n_heads: 4,
            vocab_size,
            max_positions: 256,
            d_v: 16,
            d_a: 8,
            dropout: 0.1,
        }
    }

    /// GPT-2 base dimensions with I3D (2048 per stream) and VGGish (128) features.
    pub fn gpt2_base(vocab_size: usize) -> Self {
        Self {
            n_layers: 12,
            hidden: 768,
            n_heads: 12,
            vocab_size,
            max_positions: 1024,
            d_v: 2048,
            d_a: 128,
            dropout: 0.1,
        }
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.d_v + self.d_a
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_positions == 0 {
            return Err(Error::Config("max_positions must be positive".into()));
        }
        if self.hidden == 0 || self.n_heads == 0 || !self.hidden.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.n_heads
            )));
        }
        if self.vocab_size < SPECIAL_TOKENS.len() {
            return Err(Error::Config(format!(
                "vocab_size {} cannot hold the {} special tokens",
                self.vocab_size,
                SPECIAL_TOKENS.len()
            )));
        }
        if self.feature_dim() == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Closed-form number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        let (h, v, p, f, l) = (self.hidden, self.vocab_size, self.max_positions, self.feature_dim(), self.n_layers);
        v * h + p * h + 2 * f * h + 3 * h + f + l * (12 * h * h + 12 * h)
    }
}
