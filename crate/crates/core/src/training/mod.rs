//! Losses, the three training stages, optimization, and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod data;
mod log;
mod loss;
mod model;
mod stages;

pub use adam::{optimizer_step, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC,
};
pub use config::{OptimizerConfig, OptimizerKind, Reduction, StageSteps, TrainConfig, Variant};
pub use data::MelCorpus;
pub use log::{LossLog, LOSS_LOG_HEADER};
pub use loss::{loss_cyc, loss_rec, loss_total, LossReport};
pub use model::{pad_frames, MultiHeadModel};
pub use stages::{
    data_cycle_step, shared_losses, stage1_train, stage2_train, stage3_train, DecoderInit, Session, Stage,
    Trainable,
};
