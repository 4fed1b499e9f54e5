//! Objective, optimizer, learning-rate schedule and the training loop.

pub mod adam;
pub mod loss;
mod schedule;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{combined_loss, cross_entropy, hamming_metric, hamming_surrogate, LossValues, LossWeights};
pub use schedule::cosine_lr;
pub use trainer::{
    blend_uses_source_b, checkpoint_name, read_log_csv, train, write_log_csv, BlendConfig, LogRow, TrainConfig,
    TrainOptions, TrainOutcome, LOG_FILE,
};
