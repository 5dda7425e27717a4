use serde::{Deserialize, Serialize};

use super::{build_mask, PruneScope, PruneSpec, Strategy};
use crate::analytics::{perplexity, EvalRecord, MaskSource};
use crate::criteria::ScoreVector;
use crate::error::{Error, Result};
use crate::model::TransformerModel;
use crate::predictor::{predictor_flops, Predictor};
use crate::tensor::Float;

#[derive(Debug, Clone, Copy)]
pub enum ScoreSource<'a> {
    /// One fixed score vector, one mask per sparsity.
    Static(&'a ScoreVector),
    /// Masks rebuilt per evaluation window from predicted scores.
    Predictor(&'a Predictor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub strategies: Vec<Strategy>,
    pub grid: Vec<f64>,
    pub scope: PruneScope,
    pub protect_first_layer: bool,
    pub window_len: usize,
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            strategies: vec![Strategy::Local, Strategy::Global],
            grid: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            scope: PruneScope::Both,
            protect_first_layer: false,
            window_len: 128,
            seed: 0,
        }
    }
}

impl SweepOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.grid.iter().find(|s| !(0.0..=0.9).contains(*s)) {
            return Err(Error::InvalidConfig(format!("grid: sparsity {s} outside [0, 0.9]")));
        }
        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig("strategies: empty".into()));
        }
        if self.window_len < 2 {
            return Err(Error::InvalidConfig("window_len: must be at least 2".into()));
        }
        Ok(())
    }
}

/// Perplexity at every (strategy, sparsity) point, strategies outermost and
/// sparsities in grid order.
pub fn sparsity_sweep<T: Float>(
    model: &TransformerModel<T>,
    source: ScoreSource,
    opts: &SweepOptions,
    stream: &[u32],
) -> Result<Vec<EvalRecord>> {
    opts.validate()?;
    let cfg = model.config();
    let (criterion, topology, flops) = match source {
        ScoreSource::Static(s) => (s.criterion, "static".to_string(), None),
        ScoreSource::Predictor(p) => (
            p.criterion(),
            p.topology().to_string(),
            Some(predictor_flops(cfg, p.topology(), p.config().hidden_dim_for(cfg)).flops),
        ),
    };
    let mut out = Vec::with_capacity(opts.strategies.len() * opts.grid.len());
    for &strategy in &opts.strategies {
        for &sparsity in &opts.grid {
            let spec = PruneSpec {
                strategy,
                sparsity,
                scope: opts.scope,
                protect_first_layer: opts.protect_first_layer,
            };
            let ppl = if sparsity == 0.0 {
                perplexity(model, MaskSource::Dense, stream, opts.window_len)?
            } else {
                match source {
                    ScoreSource::Static(s) => {
                        let mask = build_mask(s, &spec, cfg)?;
                        perplexity(model, MaskSource::Static(&mask), stream, opts.window_len)?
                    }
                    ScoreSource::Predictor(p) => perplexity(
                        model,
                        MaskSource::Predicted {
                            predictor: p,
                            spec: &spec,
                        },
                        stream,
                        opts.window_len,
                    )?,
                }
            };
            log::info!("sweep {strategy} {sparsity}: perplexity {ppl:.4}");
            out.push(EvalRecord {
                strategy: strategy.to_string(),
                sparsity,
                criterion: criterion.to_string(),
                topology: topology.clone(),
                perplexity: ppl,
                spearman_global: None,
                spearman_local: None,
                predictor_flops: flops,
                seed: opts.seed,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::CriterionKind;
    use crate::model::ModelConfig;

    #[test]
    fn records_follow_grid_and_zero_is_dense() {
        let m = TransformerModel::<f32>::init(ModelConfig::tiny(), 8).unwrap();
        let cfg = m.config().clone();
        let scores = ScoreVector::new(
            CriterionKind::PlainAct,
            None,
            (0..cfg.num_units()).map(|i| (i * 13 % 17) as f64).collect(),
            &cfg,
        );
        let stream: Vec<u32> = (0..150).map(|i| (i * 11 % 101) as u32).collect();
        let opts = SweepOptions {
            grid: vec![0.0, 0.5, 0.25],
            window_len: 32,
            ..Default::default()
        };
        let recs = sparsity_sweep(&m, ScoreSource::Static(&scores), &opts, &stream).unwrap();
        assert_eq!(recs.len(), 6);
        assert_eq!(recs.iter().map(|r| r.sparsity).collect::<Vec<_>>(), vec![0.0, 0.5, 0.25, 0.0, 0.5, 0.25]);
        let dense = perplexity(&m, MaskSource::Dense, &stream, 32).unwrap();
        assert_eq!(recs[0].perplexity, dense);
        assert!(recs.iter().all(|r| r.perplexity.is_finite()));
        let bad = SweepOptions {
            grid: vec![0.95],
            ..opts
        };
        assert!(sparsity_sweep(&m, ScoreSource::Static(&scores), &bad, &stream).is_err());
    }
}
