//! Optimiser, schedules, the two training stages, detector training,
//! the ablation harness and checkpointing.
//!
//! Every stage is a single-threaded loop driven by one ChaCha8 stream per
//! trained network group, so a configuration and seed fully determine the
//! resulting checkpoints.

mod ablation;
mod adam;
mod checkpoint;
mod config;
pub mod data;
mod detector;
mod stages;

pub use ablation::{
    latent_gap, run_ablation, AblationReport, AblationRow, Variant, GAP_PROJECTIONS,
};
pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use checkpoint::{Checkpoint, RngState, MAGIC, VERSION};
pub use config::{lr_at, Schedule, TrainConfig};
pub use data::ToyData;
pub use detector::{detector_auc, train_detector, DetectorRun, PhaseReport};
pub use stages::{
    checkpoint_config, decode_all, encode_means, load_vae, train_stage1, train_stage2, train_vae1,
    LatentPairs, MappingRun, Vae1Run, Vae2Run,
};

#[cfg(test)]
mod tests;
