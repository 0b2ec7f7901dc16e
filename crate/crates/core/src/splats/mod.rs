//! Gaussian-splat primitives: covariance assembly, world-frame rotations,
//! the bounded scale activation and the fine-tuning objective.

mod activation;
mod entropy;
mod generate;
mod geometry;
mod loss;

pub use activation::{scale_activation, scale_activation_vjp, scale_magnitudes, ScaleActivationParams};
pub use entropy::{soft_histogram_entropy, EntropyParams, EntropyWithGrad};
pub use generate::{sigmoid, splats_from_preactivations, PreactivationMap};
pub use geometry::{
    assemble_covariance, reparameterize_rotation, world_covariance_from_camera, GaussianSplat, SplatFrame,
};
pub use loss::{
    huber, huber_grad, reconstruction_loss, ssim, total_finetune_loss, LossParams, LossWithGrad, SSIM_C1, SSIM_C2,
};
