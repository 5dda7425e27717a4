//! Sparsity predictors: small regressors that map early activations to the
//! per-unit scores of a contextual criterion.

mod config;
mod dataset;
mod features;
mod fidelity;
mod net;

pub use config::{
    opt_preset, predictor_flops, predictor_flops_exact, Normalization, PredictorConfig, PredictorFlops, Topology,
    OPT_PRESETS,
};
pub use dataset::{
    build_dataset, denormalize_scores, norm_groups, normalize_scores, train_split, CriteriaDataset, DatasetExample,
    NormParam,
};
pub use features::{extract_features, Feature};
pub use fidelity::{fidelity_from_predictions, predictor_fidelity, Fidelity};
pub use net::{train_predictor, Predictor, PredictorLog};
