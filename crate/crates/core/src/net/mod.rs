//! The attention-based denoiser and its staged training.
//!
//! Frames enter the network std-normalised per channel; [`ArtifactNet::denoise`] maps the
//! output back to input units. Parameters are grouped by name prefix (`eeg.`, `imu.`, `attn.`,
//! `gate.`, `align.`, `dec.`, `skip.`), which is how the training stages freeze them.

mod config;
mod data;
mod loss;
mod model;
mod train;

pub use config::{NetConfig, TrainConfig};
pub use data::{coherence_config, normalize_frames, FrameBatch, TrainingSet};
pub use loss::{attention_supervision_loss, coherence_loss, total_loss, DftBasis, LossInputs, LossTerms};
pub use model::{ArtifactNet, AttentionState, HeadOutput, Mode, Pass, ATTENTION_PARAMS, ENCODER_PREFIXES, HEAD_PREFIXES};
pub use train::{
    encoder_checksum, history_to_csv, Objective, train, train_with, EpochRecord, Stage, TrainReport, DIVERGENCE_LIMIT,
    HISTORY_SCHEMA,
};
