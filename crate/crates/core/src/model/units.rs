use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Head,
    Neuron,
}

impl UnitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitKind::Head => "head",
            UnitKind::Neuron => "neuron",
        }
    }
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One prunable unit: an attention head or an FFN hidden neuron.
///
/// Canonical linear order is every head (layer-major) followed by every
/// neuron (layer-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitId {
    pub layer: usize,
    pub kind: UnitKind,
    pub index: usize,
}

impl UnitId {
    pub fn head(layer: usize, index: usize) -> Self {
        Self { layer, kind: UnitKind::Head, index }
    }

    pub fn neuron(layer: usize, index: usize) -> Self {
        Self { layer, kind: UnitKind::Neuron, index }
    }

    pub fn linear(&self, cfg: &ModelConfig) -> usize {
        match self.kind {
            UnitKind::Head => self.layer * cfg.heads_per_layer + self.index,
            UnitKind::Neuron => cfg.num_heads_total() + self.layer * cfg.ffn_dim + self.index,
        }
    }

    pub fn from_linear(cfg: &ModelConfig, i: usize) -> Self {
        let heads = cfg.num_heads_total();
        if i < heads {
            Self::head(i / cfg.heads_per_layer, i % cfg.heads_per_layer)
        } else {
            let j = i - heads;
            Self::neuron(j / cfg.ffn_dim, j % cfg.ffn_dim)
        }
    }

    pub fn is_valid(&self, cfg: &ModelConfig) -> bool {
        self.layer < cfg.num_layers
            && match self.kind {
                UnitKind::Head => self.index < cfg.heads_per_layer,
                UnitKind::Neuron => self.index < cfg.ffn_dim,
            }
    }
}

/// All units in canonical order.
pub fn all_units(cfg: &ModelConfig) -> impl Iterator<Item = UnitId> + '_ {
    (0..cfg.num_units()).map(move |i| UnitId::from_linear(cfg, i))
}

/// Per-layer keep flags for heads and FFN neurons. `true` means active.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSet {
    pub heads: Vec<Vec<bool>>,
    pub neurons: Vec<Vec<bool>>,
}

impl MaskSet {
    pub fn dense(cfg: &ModelConfig) -> Self {
        Self {
            heads: vec![vec![true; cfg.heads_per_layer]; cfg.num_layers],
            neurons: vec![vec![true; cfg.ffn_dim]; cfg.num_layers],
        }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.heads.len() != cfg.num_layers || self.neurons.len() != cfg.num_layers {
            return Err(Error::MaskShapeMismatch(format!(
                "{} head layers / {} neuron layers for a {}-layer model",
                self.heads.len(),
                self.neurons.len(),
                cfg.num_layers
            )));
        }
        for (l, (h, n)) in self.heads.iter().zip(&self.neurons).enumerate() {
            if h.len() != cfg.heads_per_layer || n.len() != cfg.ffn_dim {
                return Err(Error::MaskShapeMismatch(format!(
                    "layer {l}: {} heads / {} neurons, expected {} / {}",
                    h.len(),
                    n.len(),
                    cfg.heads_per_layer,
                    cfg.ffn_dim
                )));
            }
        }
        Ok(())
    }

    pub fn is_dense(&self) -> bool {
        self.heads.iter().chain(&self.neurons).all(|l| l.iter().all(|&k| k))
    }

    pub fn is_active(&self, unit: UnitId) -> bool {
        match unit.kind {
            UnitKind::Head => self.heads[unit.layer][unit.index],
            UnitKind::Neuron => self.neurons[unit.layer][unit.index],
        }
    }

    pub fn prune(&mut self, unit: UnitId) {
        match unit.kind {
            UnitKind::Head => self.heads[unit.layer][unit.index] = false,
            UnitKind::Neuron => self.neurons[unit.layer][unit.index] = false,
        }
    }

    pub fn with_pruned(cfg: &ModelConfig, units: impl IntoIterator<Item = UnitId>) -> Self {
        let mut m = Self::dense(cfg);
        for u in units {
            m.prune(u);
        }
        m
    }

    /// Mask that prunes everything pruned by either input.
    pub fn intersect(&self, other: &MaskSet) -> MaskSet {
        let and = |a: &Vec<Vec<bool>>, b: &Vec<Vec<bool>>| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| p && q).collect())
                .collect()
        };
        MaskSet {
            heads: and(&self.heads, &other.heads),
            neurons: and(&self.neurons, &other.neurons),
        }
    }

    pub fn surviving_units(&self, cfg: &ModelConfig) -> Vec<UnitId> {
        all_units(cfg).filter(|&u| self.is_active(u)).collect()
    }

    pub fn pruned_units(&self, cfg: &ModelConfig) -> Vec<UnitId> {
        all_units(cfg).filter(|&u| !self.is_active(u)).collect()
    }

    pub fn pruned_heads(&self) -> usize {
        self.heads.iter().flatten().filter(|&&k| !k).count()
    }

    pub fn pruned_neurons(&self) -> usize {
        self.neurons.iter().flatten().filter(|&&k| !k).count()
    }
}

/// Multiplicative gate per unit; a [`MaskSet`] is the 0/1 special case.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitScales<T> {
    pub heads: Vec<Vec<T>>,
    pub neurons: Vec<Vec<T>>,
}

impl<T: Float> UnitScales<T> {
    pub fn ones(cfg: &ModelConfig) -> Self {
        Self {
            heads: vec![vec![T::one(); cfg.heads_per_layer]; cfg.num_layers],
            neurons: vec![vec![T::one(); cfg.ffn_dim]; cfg.num_layers],
        }
    }

    pub fn from_mask(mask: &MaskSet) -> Self {
        let conv = |v: &Vec<Vec<bool>>| {
            v.iter()
                .map(|l| l.iter().map(|&k| if k { T::one() } else { T::zero() }).collect())
                .collect()
        };
        Self {
            heads: conv(&mask.heads),
            neurons: conv(&mask.neurons),
        }
    }

    pub fn set(&mut self, unit: UnitId, value: T) {
        match unit.kind {
            UnitKind::Head => self.heads[unit.layer][unit.index] = value,
            UnitKind::Neuron => self.neurons[unit.layer][unit.index] = value,
        }
    }

    pub(crate) fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let ok = self.heads.len() == cfg.num_layers
            && self.neurons.len() == cfg.num_layers
            && self.heads.iter().all(|h| h.len() == cfg.heads_per_layer)
            && self.neurons.iter().all(|n| n.len() == cfg.ffn_dim);
        if ok {
            Ok(())
        } else {
            Err(Error::MaskShapeMismatch("unit scales do not match model".into()))
        }
    }
}
