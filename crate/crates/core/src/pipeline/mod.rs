//! Training orchestration, generation, evaluation, and the pieces behind
//! the command-line interface.

mod config;
mod run;
mod train;

pub use config::{AblateFlags, LossSection, ModelScale, ModelSection, PipelineConfig, StageConfig, TrainSection};
pub use run::{evaluate, export_latents, generate, plot_beats_svg, GenerateCheckpoints};
pub use train::{
    contrast_plan, load_bps_model, load_rps_discriminator, load_rps_generator, load_trajectory,
    train_bps, train_rps, train_traj, BpsEpochLog, BpsTrainReport, RpsEpochLog, RpsTrainReport,
    TrajEpochLog, TrajTrainReport,
};
