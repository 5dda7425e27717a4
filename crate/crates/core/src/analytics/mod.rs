//! Rank statistics, perplexity evaluation, few-shot studies and report files.

mod fewshot;
mod perplexity;
mod rank_variance;
mod report;
mod stats;

pub use fewshot::{fewshot_examples, fewshot_study, FewshotRow, FewshotStudy};
pub use perplexity::{eval_windows, perplexity, window_nll, MaskSource};
pub use rank_variance::{head_ranks, rank_variance, rank_variance_from_scores, RankVarianceRow, RankVarianceTable};
pub use report::{emit_report, read_json_report, EvalRecord, FidelityRecord, ReportFormat, ReportRecord};
pub use stats::{average_ranks, bootstrap_p_positive, mean, pearson, population_variance, spearman};
