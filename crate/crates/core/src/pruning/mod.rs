mod mask;
mod oracle;
mod sweep;

pub use mask::{build_mask, mask_from_json, mask_to_json, unit_budget, PruneScope, PruneSpec, Strategy};
pub use oracle::{oracle_ablation, oracle_vector, stream_loss, write_oracle_csv, OracleEntry, MAX_ORACLE_UNITS};
pub use sweep::{sparsity_sweep, ScoreSource, SweepOptions};
