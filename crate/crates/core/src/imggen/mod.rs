//! Stage two: RGB synthesis from predicted semantics and depth plus sparse
//! RGB guidance.

mod colorize;
mod critic;
mod loss;
mod model;
mod train;

pub use colorize::colorize;
pub use critic::{ConstantCritic, Critic, CriticOutput, DiscTrace, Discriminator};
pub use loss::{discriminator_loss, generator_loss, generator_loss_and_grad, GeneratorLoss, LossWeights};
pub use model::{
    encode_condition, encode_guide, rgb_to_tensor, tensor_to_rgb, FeatureExtractor, FeatureTrace, GenCache,
    ImageConfig, ImageGenerator, ImageInputs, MultiSpadeBlock, LEAKY_SLOPE,
};
pub use train::{image_batch, image_samples, train_image_generator, ImageLossRecord, ImageSample, ImageTrainConfig};
