use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture dimensions. Defaults are the full-size configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub window_len: usize,
    pub model_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_hidden: usize,
    pub se_reduction: usize,
    pub pool_hidden: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            window_len: 200,
            model_dim: 128,
            num_layers: 2,
            num_heads: 4,
            ffn_hidden: 512,
            se_reduction: 16,
            pool_hidden: 64,
            num_classes: 6,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            input_channels: 3,
            window_len: 8,
            model_dim: 16,
            num_layers: 2,
            num_heads: 2,
            ffn_hidden: 64,
            se_reduction: 4,
            pool_hidden: 8,
            num_classes: 3,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn se_hidden(&self) -> usize {
        self.model_dim / self.se_reduction
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_channels", self.input_channels),
            ("window_len", self.window_len),
            ("model_dim", self.model_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_hidden", self.ffn_hidden),
            ("se_reduction", self.se_reduction),
            ("pool_hidden", self.pool_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.model_dim % self.se_reduction != 0 {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by se_reduction {}",
                self.model_dim, self.se_reduction
            )));
        }
        Ok(())
    }
}
