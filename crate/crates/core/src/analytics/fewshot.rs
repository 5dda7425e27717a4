use serde::{Deserialize, Serialize};

use super::ReportRecord;
use crate::criteria::{collect_criteria, CollectOptions, CriterionKind, Example, Mode};
use crate::data::{fewshot_texts, FewshotTemplate, Tokenizer};
use crate::error::{Error, Result};
use crate::model::TransformerModel;
use crate::pruning::{sparsity_sweep, ScoreSource, SweepOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewshotRow {
    pub shots: usize,
    pub strategy: String,
    pub sparsity: f64,
    pub criterion: String,
    pub perplexity: f64,
    pub seed: u64,
}

impl ReportRecord for FewshotRow {
    const HEADER: &'static [&'static str] = &["shots", "strategy", "sparsity", "criterion", "perplexity", "seed"];

    fn csv_fields(&self) -> Vec<String> {
        vec![
            self.shots.to_string(),
            self.strategy.clone(),
            self.sparsity.to_string(),
            self.criterion.clone(),
            self.perplexity.to_string(),
            self.seed.to_string(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct FewshotStudy<'a> {
    pub templates: &'a [FewshotTemplate],
    pub shots: &'a [usize],
    pub prompts_per_template: usize,
    pub criterion: CriterionKind,
    pub collect: CollectOptions,
    pub sweep: SweepOptions,
}

/// Tokenized few-shot examples from every template. Sequences longer than
/// `max_len` keep their tail, so the target always survives.
pub fn fewshot_examples(
    templates: &[FewshotTemplate],
    shots: usize,
    per_template: usize,
    seed: u64,
    tokenizer: &Tokenizer,
    max_len: usize,
) -> Vec<Example> {
    let mut examples = Vec::with_capacity(templates.len() * per_template);
    for &t in templates {
        for (prompt, target) in fewshot_texts(t, shots, per_template, seed) {
            let p = tokenizer.encode(&prompt);
            let mut tokens = p.clone();
            tokens.extend(tokenizer.encode(&target));
            let cut = tokens.len().saturating_sub(max_len);
            examples.push(Example {
                prompt_len: p.len().saturating_sub(cut).max(1),
                tokens: tokens[cut..].to_vec(),
            });
        }
    }
    examples
}

/// For each shot count: aggregate the criterion over few-shot prompts from
/// every template, then sweep static masks built from it.
pub fn fewshot_study(
    model: &TransformerModel<f64>,
    tokenizer: &Tokenizer,
    study: &FewshotStudy,
    stream: &[u32],
) -> Result<Vec<FewshotRow>> {
    if study.templates.is_empty() {
        return Err(Error::InvalidConfig("templates: empty".into()));
    }
    if study.shots.is_empty() {
        return Err(Error::InvalidConfig("shots: empty".into()));
    }
    let eval = model.cast::<f32>();
    let mut rows = Vec::new();
    for &shots in study.shots {
        let examples = fewshot_examples(
            study.templates,
            shots,
            study.prompts_per_template,
            study.sweep.seed,
            tokenizer,
            model.config().max_seq_len,
        );
        let scores = collect_criteria(model, &examples, study.criterion, Mode::Aggregate, &study.collect)?.into_vec();
        let records = sparsity_sweep(&eval, ScoreSource::Static(&scores[0]), &study.sweep, stream)?;
        rows.extend(records.into_iter().map(|r| FewshotRow {
            shots,
            strategy: r.strategy,
            sparsity: r.sparsity,
            criterion: r.criterion,
            perplexity: r.perplexity,
            seed: r.seed,
        }));
    }
    Ok(rows)
}
