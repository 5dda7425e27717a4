use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PruneScope;
use crate::error::{Error, Result};
use crate::model::{all_units, MaskSet, ModelConfig, TransformerModel, UnitId, UnitKind};
use crate::tensor::Float;

/// Hard ceiling on exhaustive single-unit ablation.
pub const MAX_ORACLE_UNITS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub layer: usize,
    pub kind: UnitKind,
    pub index: usize,
    pub delta_loss: f64,
}

impl OracleEntry {
    pub fn unit(&self) -> UnitId {
        UnitId {
            layer: self.layer,
            kind: self.kind,
            index: self.index,
        }
    }
}

/// Token-weighted mean next-token loss over a set of windows.
pub fn stream_loss<T: Float>(model: &TransformerModel<T>, windows: &[Vec<u32>], mask: Option<&MaskSet>) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for w in windows {
        let (s, n) = model.nll_sum(w, mask)?;
        total += s;
        count += n;
    }
    if count == 0 {
        return Err(Error::EmptyStream);
    }
    Ok(total / count as f64)
}

/// Loss change from removing each unit alone:
/// `loss(model without unit) − loss(model)` on the same windows.
pub fn oracle_ablation<T: Float>(
    model: &TransformerModel<T>,
    windows: &[Vec<u32>],
    scope: PruneScope,
    max_units: usize,
) -> Result<Vec<OracleEntry>> {
    let cfg = model.config();
    if max_units > MAX_ORACLE_UNITS || cfg.num_units() > max_units {
        return Err(Error::TooManyUnits {
            units: cfg.num_units(),
            max: max_units.min(MAX_ORACLE_UNITS),
        });
    }
    let dense = stream_loss(model, windows, None)?;
    let units: Vec<UnitId> = all_units(cfg).filter(|u| scope.includes(u.kind)).collect();
    units
        .par_iter()
        .map(|&u| {
            let mask = MaskSet::with_pruned(cfg, [u]);
            Ok(OracleEntry {
                layer: u.layer,
                kind: u.kind,
                index: u.index,
                delta_loss: stream_loss(model, windows, Some(&mask))? - dense,
            })
        })
        .collect()
}

/// Oracle deltas laid out in canonical unit order (zero outside `entries`).
pub fn oracle_vector(entries: &[OracleEntry], cfg: &ModelConfig) -> Vec<f64> {
    let mut v = vec![0.0; cfg.num_units()];
    for e in entries {
        v[e.unit().linear(cfg)] = e.delta_loss;
    }
    v
}

pub fn write_oracle_csv(path: &Path, entries: &[OracleEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    if entries.is_empty() {
        w.write_record(["layer", "kind", "index", "delta_loss"])
            .map_err(|e| Error::csv(path, e))?;
    }
    for e in entries {
        w.serialize(e).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
