//! Python bindings: load checkpoints, score units, build masks, evaluate
//! perplexity and query the predictor cost model.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use shlm_core::analytics::{self, MaskSource};
use shlm_core::criteria::{collect_criteria, CollectOptions, CriterionKind, Example, Mode, ScoreVector};
use shlm_core::data::{synthetic_corpus, Tokenizer};
use shlm_core::model::{ModelConfig, TransformerModel};
use shlm_core::predictor::{extract_features, opt_preset, predictor_flops, Topology};
use shlm_core::pruning::{build_mask, PruneSpec, Strategy};

fn err(e: shlm_core::Error) -> PyErr {
    match e {
        shlm_core::Error::InvalidConfig(_) | shlm_core::Error::ContextualUnsupported(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = shlm_core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

/// A trained (or freshly initialized) transformer, held in f64.
#[pyclass(name = "Model", module = "shlm")]
struct PyModel {
    inner: TransformerModel<f64>,
}

#[pymethods]
impl PyModel {
    /// Random initialization of a named preset: toy, small or tiny.
    #[staticmethod]
    #[pyo3(signature = (preset, seed = 0))]
    fn init(preset: &str, seed: u64) -> PyResult<Self> {
        let cfg = ModelConfig::preset(preset).ok_or_else(|| PyValueError::new_err(format!("unknown preset {preset:?}")))?;
        Ok(Self {
            inner: TransformerModel::init(cfg, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: TransformerModel::load(&path).map_err(err)?,
        })
    }

    fn num_units(&self) -> usize {
        self.inner.config().num_units()
    }

    fn num_layers(&self) -> usize {
        self.inner.config().num_layers
    }

    /// Mean next-token loss of one sequence.
    fn loss(&self, tokens: Vec<u32>) -> PyResult<f64> {
        self.inner
            .loss(&tokens, None, shlm_core::model::LossScope::Full)
            .map_err(err)
    }

    /// Per-unit scores in canonical order (all heads, then all neurons).
    /// Aggregate mode returns one list; contextual mode one list per example.
    #[pyo3(signature = (criterion, examples, contextual = false))]
    fn scores(&self, criterion: &str, examples: Vec<Vec<u32>>, contextual: bool) -> PyResult<Vec<Vec<f64>>> {
        let kind: CriterionKind = parse(criterion)?;
        let mode = if contextual { Mode::Contextual } else { Mode::Aggregate };
        let ex: Vec<Example> = examples.into_iter().map(Example::window).collect();
        let out = collect_criteria(&self.inner, &ex, kind, mode, &CollectOptions::default()).map_err(err)?;
        Ok(out.into_vec().into_iter().map(|s| s.values).collect())
    }

    /// Surviving-unit flags in canonical order after pruning by `scores`.
    fn mask(&self, scores: Vec<f64>, strategy: &str, sparsity: f64) -> PyResult<Vec<bool>> {
        let cfg = self.inner.config();
        let sv = ScoreVector::new(CriterionKind::PlainAct, None, scores, cfg);
        let mask = build_mask(&sv, &PruneSpec::new(parse::<Strategy>(strategy)?, sparsity), cfg).map_err(err)?;
        Ok(shlm_core::model::all_units(cfg).map(|u| mask.is_active(u)).collect())
    }

    /// Perplexity of a token stream, optionally under a static mask built
    /// from `scores`.
    #[pyo3(signature = (tokens, window_len = 128, scores = None, strategy = "global", sparsity = 0.0))]
    fn perplexity(
        &self,
        tokens: Vec<u32>,
        window_len: usize,
        scores: Option<Vec<f64>>,
        strategy: &str,
        sparsity: f64,
    ) -> PyResult<f64> {
        let cfg = self.inner.config();
        let mask = match scores {
            Some(s) => {
                let sv = ScoreVector::new(CriterionKind::PlainAct, None, s, cfg);
                Some(build_mask(&sv, &PruneSpec::new(parse::<Strategy>(strategy)?, sparsity), cfg).map_err(err)?)
            }
            None => None,
        };
        let source = mask.as_ref().map_or(MaskSource::Dense, MaskSource::Static);
        analytics::perplexity(&self.inner, source, &tokens, window_len).map_err(err)
    }
}

/// A trained sparsity predictor.
#[pyclass(name = "Predictor", module = "shlm")]
struct PyPredictor {
    inner: shlm_core::predictor::Predictor,
}

#[pymethods]
impl PyPredictor {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: shlm_core::predictor::Predictor::load(&path).map_err(err)?,
        })
    }

    fn topology(&self) -> &'static str {
        self.inner.topology().name()
    }

    /// Predicted per-unit scores for `prompt`; uncovered layers are 0.
    fn predict(&self, model: &PyModel, prompt: Vec<u32>) -> PyResult<Vec<f64>> {
        let feature = extract_features(&model.inner, &prompt, self.inner.config()).map_err(err)?;
        Ok(self.inner.predict_scores(&feature).map_err(err)?.values)
    }
}

/// Spearman rank correlation with average ranks for ties.
#[pyfunction]
fn spearman(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    analytics::spearman(&a, &b).map_err(err)
}

/// Predictor cost for an OPT preset: (flops, dejavu_flops, reduction).
#[pyfunction]
#[pyo3(signature = (preset, topology = "shadow", p1 = 2048))]
fn flops(preset: &str, topology: &str, p1: usize) -> PyResult<(f64, f64, f64)> {
    let cfg = opt_preset(preset).ok_or_else(|| PyValueError::new_err(format!("unknown preset {preset:?}")))?;
    let f = predictor_flops(&cfg, parse::<Topology>(topology)?, p1);
    Ok((f.flops, f.dejavu_flops, f.reduction_vs_dejavu))
}

/// Byte tokens of the built-in synthetic corpus.
#[pyfunction]
#[pyo3(signature = (seed, n_bytes))]
fn synthetic_tokens(seed: u64, n_bytes: usize) -> Vec<u32> {
    Tokenizer::byte().encode(&synthetic_corpus(seed, n_bytes))
}

#[pymodule]
fn shlm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyPredictor>()?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(flops, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_tokens, m)?)?;
    Ok(())
}
