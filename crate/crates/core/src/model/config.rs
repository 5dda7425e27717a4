use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positional {
    #[default]
    Learned,
}

/// Architecture constants of the decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub embed_dim: usize,
    pub heads_per_layer: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub positional: Positional,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Desk-scale default: 4 layers, 8 heads of width 16, 512 FFN neurons.
    pub fn toy() -> Self {
        Self {
            num_layers: 4,
            embed_dim: 128,
            heads_per_layer: 8,
            head_dim: 16,
            ffn_dim: 512,
            vocab_size: 256,
            max_seq_len: 128,
            activation: Activation::Relu,
            positional: Positional::Learned,
        }
    }

    /// Mid-size preset used for predictor and sweep experiments.
    pub fn small() -> Self {
        Self {
            num_layers: 4,
            embed_dim: 64,
            heads_per_layer: 4,
            head_dim: 16,
            ffn_dim: 128,
            ..Self::toy()
        }
    }

    /// Two layers, 4 heads and 32 neurons each: 72 prunable units, cheap
    /// enough for exhaustive single-unit ablation.
    pub fn tiny() -> Self {
        Self {
            num_layers: 2,
            embed_dim: 32,
            heads_per_layer: 4,
            head_dim: 8,
            ffn_dim: 32,
            ..Self::toy()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "toy" => Some(Self::toy()),
            "small" => Some(Self::small()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("num_layers", self.num_layers),
            ("embed_dim", self.embed_dim),
            ("heads_per_layer", self.heads_per_layer),
            ("head_dim", self.head_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.embed_dim != self.heads_per_layer * self.head_dim {
            return Err(Error::InvalidConfig(format!(
                "embed_dim {} != heads_per_layer {} * head_dim {}",
                self.embed_dim, self.heads_per_layer, self.head_dim
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::InvalidConfig("max_seq_len must be at least 2".into()));
        }
        Ok(())
    }

    pub fn num_heads_total(&self) -> usize {
        self.num_layers * self.heads_per_layer
    }

    pub fn num_neurons_total(&self) -> usize {
        self.num_layers * self.ffn_dim
    }

    /// Prunable units: `N·(H+F)`.
    pub fn num_units(&self) -> usize {
        self.num_layers * (self.heads_per_layer + self.ffn_dim)
    }

    /// Closed-form parameter count. The LM head is tied to the token
    /// embedding and all projections are bias-free.
    pub fn param_count(&self) -> usize {
        let (v, e, f, l, n) = (self.vocab_size, self.embed_dim, self.ffn_dim, self.max_seq_len, self.num_layers);
        let per_layer = 4 * e * e + 2 * e * f + 4 * e;
        v * e + l * e + n * per_layer + 2 * e
    }
}
