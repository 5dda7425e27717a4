use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::criteria::{group_range, ScoreVector};
use crate::error::{Error, Result};
use crate::model::{MaskSet, ModelConfig, UnitId, UnitKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Same fraction pruned in every layer, importance compared within a layer.
    Local,
    /// One budget for the whole model; layers may end up unbalanced.
    Global,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Local => "local",
            Self::Global => "global",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Self::Local),
            "global" => Ok(Self::Global),
            other => Err(Error::InvalidConfig(format!("strategy: unknown value {other:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneScope {
    Heads,
    Neurons,
    Both,
}

impl PruneScope {
    pub fn includes(self, kind: UnitKind) -> bool {
        matches!(
            (self, kind),
            (Self::Both, _) | (Self::Heads, UnitKind::Head) | (Self::Neurons, UnitKind::Neuron)
        )
    }
}

impl FromStr for PruneScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heads" => Ok(Self::Heads),
            "neurons" => Ok(Self::Neurons),
            "both" => Ok(Self::Both),
            other => Err(Error::InvalidConfig(format!("scope: unknown value {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneSpec {
    pub strategy: Strategy,
    pub sparsity: f64,
    pub scope: PruneScope,
    pub protect_first_layer: bool,
}

impl PruneSpec {
    pub fn new(strategy: Strategy, sparsity: f64) -> Self {
        Self {
            strategy,
            sparsity,
            scope: PruneScope::Both,
            protect_first_layer: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..1.0).contains(&self.sparsity) {
            Ok(())
        } else {
            Err(Error::BudgetExceedsUnits(format!(
                "sparsity {} outside [0, 1)",
                self.sparsity
            )))
        }
    }
}

/// `⌊sparsity · n⌋`, robust to representation error in `sparsity`.
pub fn unit_budget(sparsity: f64, n: usize) -> usize {
    ((sparsity * n as f64) + 1e-9).floor() as usize
}

/// Prunes the lowest-scored units under the budget of `spec`. Ties go to
/// the lower canonical index. Layers not covered by `scores` (and layer 0
/// when protected) are left dense and excluded from budgets.
pub fn build_mask(scores: &ScoreVector, spec: &PruneSpec, cfg: &ModelConfig) -> Result<MaskSet> {
    spec.validate()?;
    scores.validate(cfg)?;
    let eligible: Vec<usize> = (0..cfg.num_layers)
        .filter(|&l| scores.covered[l] && !(spec.protect_first_layer && l == 0))
        .collect();
    let mut mask = MaskSet::dense(cfg);
    for kind in [UnitKind::Head, UnitKind::Neuron] {
        if !spec.scope.includes(kind) {
            continue;
        }
        let per_layer = match kind {
            UnitKind::Head => cfg.heads_per_layer,
            UnitKind::Neuron => cfg.ffn_dim,
        };
        let pools: Vec<Vec<usize>> = match spec.strategy {
            Strategy::Local => eligible.iter().map(|&l| group_range(cfg, l, kind).collect()).collect(),
            Strategy::Global => vec![eligible.iter().flat_map(|&l| group_range(cfg, l, kind)).collect()],
        };
        for mut pool in pools {
            let mut budget = match spec.strategy {
                Strategy::Local => unit_budget(spec.sparsity, per_layer),
                Strategy::Global => unit_budget(spec.sparsity, pool.len()),
            };
            if spec.strategy == Strategy::Local {
                budget = budget.min(per_layer - 1);
            }
            pool.sort_by(|&a, &b| scores.values[a].total_cmp(&scores.values[b]).then(a.cmp(&b)));
            for &i in &pool[..budget] {
                mask.prune(UnitId::from_linear(cfg, i));
            }
        }
    }
    Ok(mask)
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskDump {
    surviving: Vec<UnitId>,
}

/// JSON object listing every surviving unit.
pub fn mask_to_json(mask: &MaskSet, cfg: &ModelConfig) -> String {
    serde_json::to_string_pretty(&MaskDump {
        surviving: mask.surviving_units(cfg),
    })
    .expect("mask serializes")
}

pub fn mask_from_json(json: &str, cfg: &ModelConfig) -> Result<MaskSet> {
    let dump: MaskDump = serde_json::from_str(json).map_err(|e| Error::Format(format!("mask: {e}")))?;
    let mut mask = MaskSet::with_pruned(cfg, crate::model::all_units(cfg));
    for u in dump.surviving {
        if !u.is_valid(cfg) {
            return Err(Error::MaskShapeMismatch(format!("unit {u:?} outside model")));
        }
        match u.kind {
            UnitKind::Head => mask.heads[u.layer][u.index] = true,
            UnitKind::Neuron => mask.neurons[u.layer][u.index] = true,
        }
    }
    Ok(mask)
}
