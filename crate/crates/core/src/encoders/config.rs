use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub joint_dim: usize,
    /// Softmax temperature applied to cosine similarities.
    pub temperature: f64,
    /// Width of the synthetic raw image features.
    pub raw_feature_dim: usize,
    pub image_hidden_dim: usize,
    /// Standard deviation of the seeded normal weight initialization.
    pub init_std: f64,
    /// Draw weight matrices with std `1/sqrt(fan_in)` instead of
    /// `init_std`; embeddings and biases keep `init_std`. Used when the
    /// encoder is aligned before use.
    pub fan_in_init: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            embed_dim: 32,
            num_layers: 4,
            num_heads: 4,
            max_seq_len: 32,
            joint_dim: 16,
            temperature: 0.07,
            raw_feature_dim: 32,
            image_hidden_dim: 64,
            init_std: 0.02,
            fan_in_init: false,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn mlp_dim(&self) -> usize {
        4 * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("max_seq_len", self.max_seq_len),
            ("joint_dim", self.joint_dim),
            ("raw_feature_dim", self.raw_feature_dim),
            ("image_hidden_dim", self.image_hidden_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Configuration(format!("encoder {name} must be positive")));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Configuration(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.init_std >= 0.0) {
            return Err(Error::Configuration("init_std must be non-negative".into()));
        }
        Ok(())
    }
}
