//! Minimal tensor engine with analytic gradients for the residual
//! encoder-decoder, its loss and optimizer.

mod checkpoint;
pub mod layers;
mod loss;
mod optim;
mod scalar;
mod tensor;
mod unet;

pub use checkpoint::{decode as decode_checkpoint, encode as encode_checkpoint, load_checkpoint, save_checkpoint};
pub use layers::{
    concat_channels, conv2d_backward, conv2d_forward, leaky_relu, leaky_relu_backward, maxpool2, maxpool2_backward,
    split_channels, upsample_nearest2, upsample_nearest2_backward, Conv, ConvGrad,
};
pub use loss::masked_l1_loss;
pub use optim::{adamax_step, AdaMaxState, BETA1, BETA2};
pub use scalar::Scalar;
pub use tensor::Tensor4;
pub use unet::{unet_backward, unet_forward, ChannelPlan, NetParams, UNetCache, LAYER_NAMES};
