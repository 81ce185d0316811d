//! The triplet scoring model: parameters, scoring, loss, optimizer and the
//! training loop.

pub mod adam;
pub mod loss;
pub mod negatives;
mod params;
pub mod score;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{batch_loss, gradients, margin_loss, Example, ParamGrads, TrainingPair};
pub use negatives::{NegativeSampler, NegativeStrategy};
pub use params::{
    combine_tables, initialize, model_targets, FreezeFlags, InitConfig, InitReport, InitSource,
    ModelParams, ParamGroup,
};
pub use score::{pair_inputs, scale_specialty, trilinear, PairInputs};
pub use train::{train, Ablation, Checkpoint, EpochRecord, History, ModelScorer, TrainConfig};
