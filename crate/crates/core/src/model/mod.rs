//! Toy decoder-only language model with maskable heads and FFN neurons.

mod checkpoint;
mod config;
mod train;
mod transformer;
mod units;

pub use checkpoint::{file_hash, Container, TensorRecord, FORMAT_VERSION, MAGIC};
pub use config::{Activation, ModelConfig, Positional};
pub use train::{train_lm, TrainConfig, TrainingLog};
pub use transformer::{
    Capture, ForwardOptions, ForwardOutput, LayerWeights, LossScope, Param, TransformerModel, UnitCapture,
};
pub(crate) use transformer::{Hooks, Track};
pub use units::{all_units, MaskSet, UnitId, UnitKind, UnitScales};
