//! Stage one: predicts dense semantics and depth at a new pose from the
//! sparse guidance rendered out of the point cloud, with a learned
//! conditional prior over a spatial latent.

mod config;
mod data;
mod gaussian;
mod model;
mod rollout;
mod train;

pub use config::StructureConfig;
pub use data::{build_episodes, episodes_for_world, render_nodes, Episode, EpisodeSpec};
pub use gaussian::{kl_divergence, sample_z, sample_z_backward, GaussianParams, LOG_VAR_MAX, LOG_VAR_MIN};
pub use model::{
    encode_frames, encode_guidance, structure_loss_components, Decoded, Encoded, StructureBatch,
    StructureGenerator, StructureLoss,
};
pub use rollout::{
    rollout, GeneratorPredictor, NearestNeighbor, RolloutMode, RolloutStep, StructurePredictor,
    ZPolicy,
};
pub use train::{make_batch, train_structure, LossRecord, StructureTrainConfig, TrainMode};
