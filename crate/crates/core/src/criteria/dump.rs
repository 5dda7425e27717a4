use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CriterionKind, Mode, ScoreVector};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, UnitId, UnitKind};

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    example_id: String,
    layer: usize,
    kind: UnitKind,
    index: usize,
    score: f64,
}

/// Metadata written next to a score CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSidecar {
    pub criterion: CriterionKind,
    pub mode: Mode,
    pub shots: usize,
    pub seed: u64,
    pub checkpoint_hash: String,
    pub examples: usize,
}

/// Rows `(example_id, layer, kind, index, score)`; aggregate vectors use
/// `mean` as the example id. Only covered layers are written.
pub fn write_scores_csv(path: &Path, scores: &[ScoreVector], cfg: &ModelConfig) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    if scores.is_empty() {
        w.write_record(["example_id", "layer", "kind", "index", "score"])
            .map_err(|e| Error::csv(path, e))?;
    }
    for s in scores {
        let id = s.example_id.map_or_else(|| "mean".to_string(), |i| i.to_string());
        for (i, &score) in s.values.iter().enumerate() {
            let u = UnitId::from_linear(cfg, i);
            if !s.covered[u.layer] {
                continue;
            }
            w.serialize(ScoreRow {
                example_id: id.clone(),
                layer: u.layer,
                kind: u.kind,
                index: u.index,
                score,
            })
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a score CSV written by [`write_scores_csv`] with full coverage.
pub fn read_scores_csv(path: &Path, criterion: CriterionKind, cfg: &ModelConfig) -> Result<Vec<ScoreVector>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for row in r.deserialize::<ScoreRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let u = UnitId {
            layer: row.layer,
            kind: row.kind,
            index: row.index,
        };
        if !u.is_valid(cfg) {
            return Err(Error::Format(format!("unit {u:?} outside model")));
        }
        if out.last().map(|(id, _)| id != &row.example_id).unwrap_or(true) {
            out.push((row.example_id.clone(), vec![None; cfg.num_units()]));
        }
        out.last_mut().unwrap().1[u.linear(cfg)] = Some(row.score);
    }
    out.into_iter()
        .map(|(id, vals)| {
            let values = vals
                .into_iter()
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::Format(format!("example {id} does not cover every unit")))?;
            let example_id = if id == "mean" {
                None
            } else {
                Some(id.parse().map_err(|_| Error::Format(format!("bad example id {id}")))?)
            };
            Ok(ScoreVector::new(criterion, example_id, values, cfg))
        })
        .collect()
}

pub fn write_sidecar(path: &Path, sidecar: &ScoreSidecar) -> Result<()> {
    let json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}
