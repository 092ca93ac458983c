//! Losses, Adam and scene inversion.

mod adam;
mod inversion;
mod losses;
mod objective;
mod params;

use thiserror::Error;

use crate::pnp::PnpError;
use crate::render::RenderError;

pub use adam::{adam_step, AdamState, DEFAULT_LR};
pub use inversion::{
    invert_scene, invert_scene_with, write_loss_trace, InversionConfig, InversionResult, LossRecord,
};
pub use losses::{
    apply_affine, background_loss, background_loss_grad, densest_part, downsample, equivariance_loss,
    geometry_reg_loss, init_loss, init_loss_sigma_grad, invert_affine, part_mean_density,
    pyramid_reconstruction_grad, pyramid_reconstruction_loss, warp_affine, Affine2, DEFAULT_PYRAMID,
    INIT_DENSITY_THRESHOLD, OCCUPANCY_CLAMP,
};
pub use objective::{grad_render_loss, EquivarianceSample, LossBreakdown, LossWeights, Objective, TargetView};
pub use params::{logit, sigmoid, softplus, softplus_inverse, VolumeParams};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{width}x{height} image is not divisible by {factor}")]
    IndivisibleSize { width: usize, height: usize, factor: usize },
    #[error("downsampling factor {0} is not a power of two")]
    InvalidFactor(usize),
    #[error("affine map is singular (det {0})")]
    SingularAffine(f64),
    #[error("non-finite loss or parameters at step {step}")]
    NonFinite { step: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Pnp(#[from] PnpError),
}
