//! Acoustic model: text encoder, accent variance adaptor, mel decoder,
//! intensity predictor, composite loss, training loop and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod network;
pub mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::ModelConfig;
pub use network::{
    check_intensity, duration_from_log, expand_durations, total_loss, total_loss_with_probes, AdaptorOutput, CaiTts,
    Consistency, LossTargets, LossVars, Losses, Predictions, ProsodyStats, Regulation, Synthesis, SynthesisRequest,
    VarianceTargets,
};
pub use train::{TrainConfig, Trainer, TrainingItem};

#[cfg(test)]
mod tests;
