use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::RankVarianceRow;
use crate::error::{Error, Result};

/// One sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub strategy: String,
    pub sparsity: f64,
    pub criterion: String,
    /// Predictor topology, or `static` for fixed scores.
    pub topology: String,
    pub perplexity: f64,
    pub spearman_global: Option<f64>,
    pub spearman_local: Option<f64>,
    pub predictor_flops: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRecord {
    pub topology: String,
    pub criterion: String,
    pub spearman_global: f64,
    pub spearman_local: f64,
    pub mse: f64,
    pub seed: u64,
}

/// A table row with a fixed CSV column order.
pub trait ReportRecord: Serialize + DeserializeOwned {
    const HEADER: &'static [&'static str];

    fn csv_fields(&self) -> Vec<String>;
}

impl ReportRecord for EvalRecord {
    const HEADER: &'static [&'static str] = &["strategy", "sparsity", "criterion", "topology", "perplexity", "seed"];

    fn csv_fields(&self) -> Vec<String> {
        vec![
            self.strategy.clone(),
            self.sparsity.to_string(),
            self.criterion.clone(),
            self.topology.clone(),
            self.perplexity.to_string(),
            self.seed.to_string(),
        ]
    }
}

impl ReportRecord for FidelityRecord {
    const HEADER: &'static [&'static str] = &["topology", "criterion", "spearman_global", "spearman_local", "mse", "seed"];

    fn csv_fields(&self) -> Vec<String> {
        vec![
            self.topology.clone(),
            self.criterion.clone(),
            self.spearman_global.to_string(),
            self.spearman_local.to_string(),
            self.mse.to_string(),
            self.seed.to_string(),
        ]
    }
}

impl ReportRecord for RankVarianceRow {
    const HEADER: &'static [&'static str] = &["layer", "head", "mean_rank", "rank_variance"];

    fn csv_fields(&self) -> Vec<String> {
        vec![
            self.layer.to_string(),
            self.head.to_string(),
            self.mean_rank.to_string(),
            self.rank_variance.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::InvalidConfig(format!("format: unknown value {other:?}"))),
        }
    }
}

pub fn emit_report<R: ReportRecord>(records: &[R], path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
            w.write_record(R::HEADER).map_err(|e| Error::csv(path, e))?;
            for r in records {
                w.write_record(r.csv_fields()).map_err(|e| Error::csv(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
        ReportFormat::Json => {
            let json = serde_json::to_string_pretty(records).expect("records serialize");
            std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
        }
    }
}

pub fn read_json_report<R: ReportRecord>(path: &Path) -> Result<Vec<R>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(s: f64) -> EvalRecord {
        EvalRecord {
            strategy: "global".into(),
            sparsity: s,
            criterion: "plainact".into(),
            topology: "static".into(),
            perplexity: 12.5,
            spearman_global: None,
            spearman_local: Some(0.25),
            predictor_flops: None,
            seed: 7,
        }
    }

    #[test]
    fn empty_csv_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sweep.csv");
        emit_report::<EvalRecord>(&[], &p, ReportFormat::Csv).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "strategy,sparsity,criterion,topology,perplexity,seed\n");
    }

    #[test]
    fn csv_columns_and_json_reload() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![record(0.0), record(0.5)];
        let c = dir.path().join("s.csv");
        emit_report(&recs, &c, ReportFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&c).unwrap();
        assert_eq!(text.lines().nth(2).unwrap(), "global,0.5,plainact,static,12.5,7");
        let j = dir.path().join("s.json");
        emit_report(&recs, &j, ReportFormat::Json).unwrap();
        assert_eq!(read_json_report::<EvalRecord>(&j).unwrap(), recs);
    }
}
