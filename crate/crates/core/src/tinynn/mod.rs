//! Small deterministic tensor kernel with hand-written backward passes.

mod act;
mod adam;
mod checkpoint;
mod conv;
mod gradcheck;
mod layers;
mod loss;
mod norm;
mod params;
mod tensor;

pub use act::{
    concat_channels, leaky_relu, leaky_relu_backward, nearest_upsample, nearest_upsample_backward,
    relu, relu_backward, resize_nearest, resize_nearest_backward, sigmoid, sigmoid_backward,
    sigmoid_scalar, softmax_channels, softmax_channels_backward, split_channels,
};
pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CheckpointHeader, TensorEntry, CHECKPOINT_SCHEMA_VERSION,
};
pub use conv::{
    conv2d_circx, conv2d_circx_backward, conv_transpose2d_circx, conv_transpose2d_circx_backward,
    partial_conv2d, partial_conv2d_backward, ConvGrads,
};
pub use gradcheck::{check_input_grad, grad_check, relative_error, relative_error_floor, GradCheckOptions, GradCheckReport};
pub use layers::{spade_modulate, Conv, ConvT, PartialConv, Spade, SpadeCache};
pub use loss::{
    cross_entropy, hinge_discriminator, hinge_generator, kl_diag_gauss, l1_mean, KlGrads,
};
pub use norm::{instance_norm, instance_norm_backward, INSTANCE_NORM_EPS};
pub use params::{Grads, Param, ParamId, ParamStore};
pub use tensor::Tensor4;
