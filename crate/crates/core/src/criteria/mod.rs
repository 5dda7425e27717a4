//! Pruning criteria: per-unit saliency scores for attention heads and FFN
//! neurons, per input or aggregated over a set of inputs.

mod aggregate;
mod collect;
mod contextual;
mod dump;
mod grasp;
mod kind;
mod score;

pub use aggregate::{
    correlation_matrix, jacov_from_correlation, score_epenas_aggregate, score_jacov_aggregate, unit_gradient_vectors,
    JACOV_K,
};
pub use collect::{capture_example, collect_criteria, score_example, CollectOptions, Collected, Example, Mode};
pub use contextual::{
    first_order_terms, nwot_value, score_fisher, score_from_capture, score_gradnorm, score_l2norm, score_nwot,
    score_plainact, score_snip,
};
pub use dump::{read_scores_csv, write_scores_csv, write_sidecar, ScoreSidecar};
pub use grasp::{score_grasp, GRASP_EPS};
pub use kind::CriterionKind;
pub use score::{mean_scores, ScoreVector};
pub(crate) use score::group_range;
