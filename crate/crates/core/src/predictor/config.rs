use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// One predictor reading layer 0's attention output; layer 0 stays dense.
    Shadow,
    /// One predictor reading the whole embedded sequence through a small encoder.
    FullSeq,
    /// Per-layer predictors hosted at every `stride`-th layer.
    DejaVu,
}

impl Topology {
    pub const ALL: [Topology; 3] = [Self::Shadow, Self::FullSeq, Self::DejaVu];

    pub fn name(self) -> &'static str {
        match self {
            Self::Shadow => "shadow",
            Self::FullSeq => "fullseq",
            Self::DejaVu => "dejavu",
        }
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("topology: unknown value {s:?}")))
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Target normalization, applied per example to every (layer, unit kind) group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    #[serde(rename = "per-layer-minmax")]
    MinMax,
    #[serde(rename = "per-layer-zscore")]
    ZScore,
    #[serde(rename = "none")]
    None,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-layer-minmax" | "minmax" => Ok(Self::MinMax),
            "per-layer-zscore" | "zscore" => Ok(Self::ZScore),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidConfig(format!("normalization: unknown value {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub topology: Topology,
    pub hidden_layers: usize,
    /// Hidden width; `None` means `4 · embed_dim`.
    pub hidden_dim: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub normalization: Normalization,
    /// Distance between DejaVu host layers.
    pub dejavu_stride: usize,
    /// Number of following layers each DejaVu host predicts.
    pub dejavu_lookahead: usize,
    /// Attention heads of the full-sequence encoder.
    pub encoder_heads: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            topology: Topology::Shadow,
            hidden_layers: 1,
            hidden_dim: None,
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.01,
            normalization: Normalization::MinMax,
            dejavu_stride: 2,
            dejavu_lookahead: 2,
            encoder_heads: 2,
        }
    }
}

impl PredictorConfig {
    pub fn hidden_dim_for(&self, model: &ModelConfig) -> usize {
        self.hidden_dim.unwrap_or(4 * model.embed_dim)
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let fail = |field: &str, why: &str| Err(Error::InvalidConfig(format!("{field}: {why}")));
        if self.hidden_layers != 1 {
            return fail("hidden_layers", "only one hidden layer is supported");
        }
        if self.hidden_dim == Some(0) {
            return fail("hidden_dim", "must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1");
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return fail("lr", "must be positive");
        }
        if self.dejavu_stride == 0 || self.dejavu_lookahead == 0 {
            return fail("dejavu_stride", "stride and lookahead must be at least 1");
        }
        if self.encoder_heads == 0 || model.embed_dim % self.encoder_heads != 0 {
            return fail("encoder_heads", "must divide embed_dim");
        }
        if self.topology != Topology::FullSeq && model.num_layers < 2 {
            return fail("topology", "needs at least two model layers");
        }
        Ok(())
    }

    /// DejaVu hosts and the layers each one predicts.
    pub fn dejavu_hosts(&self, model: &ModelConfig) -> Vec<(usize, Vec<usize>)> {
        (0..model.num_layers)
            .step_by(self.dejavu_stride.max(1))
            .map(|h| (h, (h + 1..=h + self.dejavu_lookahead).filter(|&l| l < model.num_layers).collect::<Vec<_>>()))
            .filter(|(_, covered)| !covered.is_empty())
            .collect()
    }

    /// Layers whose units the topology scores.
    pub fn covered_layers(&self, model: &ModelConfig) -> Vec<bool> {
        let n = model.num_layers;
        match self.topology {
            Topology::Shadow => (0..n).map(|l| l > 0).collect(),
            Topology::FullSeq => vec![true; n],
            Topology::DejaVu => {
                let mut c = vec![false; n];
                for (_, layers) in self.dejavu_hosts(model) {
                    layers.into_iter().for_each(|l| c[l] = true);
                }
                c
            }
        }
    }
}

/// Multiply-accumulate count of one predictor invocation per token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorFlops {
    pub flops: f64,
    pub dejavu_flops: f64,
    /// `(dejavu − this) / dejavu`.
    pub reduction_vs_dejavu: f64,
}

/// Closed-form predictor cost:
/// DejaVu `N(E·p₁ + p₁(H+F))`, shadow `E·p₁ + p₁·N(H+F)`, and the
/// full-sequence variant adds its encoder, `2(2E² + E·L²)`.
pub fn predictor_flops(model: &ModelConfig, topology: Topology, p1: usize) -> PredictorFlops {
    let (n, e, h, f, l) = (
        model.num_layers as f64,
        model.embed_dim as f64,
        model.heads_per_layer as f64,
        model.ffn_dim as f64,
        model.max_seq_len as f64,
    );
    let p = p1 as f64;
    let dejavu = n * (e * p + p * (h + f));
    let shadow = e * p + p * n * (h + f);
    let flops = match topology {
        Topology::DejaVu => dejavu,
        Topology::Shadow => shadow,
        Topology::FullSeq => shadow + 2.0 * (2.0 * e * e + e * l * l),
    };
    PredictorFlops {
        flops,
        dejavu_flops: dejavu,
        reduction_vs_dejavu: (dejavu - flops) / dejavu,
    }
}

/// Exact integer form of the shadow/DejaVu cost pair.
pub fn predictor_flops_exact(model: &ModelConfig, p1: u128) -> (u128, u128) {
    let (n, e, h, f) = (
        model.num_layers as u128,
        model.embed_dim as u128,
        model.heads_per_layer as u128,
        model.ffn_dim as u128,
    );
    (n * (e * p1 + p1 * (h + f)), e * p1 + p1 * n * (h + f))
}

/// Dimension tables of reference OPT sizes, used for cost accounting only.
pub fn opt_preset(name: &str) -> Option<ModelConfig> {
    let (n, e, h, f) = match name {
        "opt-1.3b" => (24, 2048, 32, 8192),
        "opt-13b" => (40, 5120, 40, 20480),
        "opt-30b" => (48, 7168, 56, 28672),
        "opt-66b" => (64, 9216, 72, 36864),
        "opt-175b" => (96, 12288, 96, 49152),
        _ => return None,
    };
    Some(ModelConfig {
        num_layers: n,
        embed_dim: e,
        heads_per_layer: h,
        head_dim: e / h,
        ffn_dim: f,
        vocab_size: 50272,
        max_seq_len: 2048,
        ..ModelConfig::toy()
    })
}

pub const OPT_PRESETS: [&str; 5] = ["opt-1.3b", "opt-13b", "opt-30b", "opt-66b", "opt-175b"];
