//! Trainable non-local reaction diffusion for grayscale image denoising.
//!
//! Each stage of the model filters the image with learned zero-mean kernels,
//! mixes the responses over block-matched neighbors, passes them through
//! learned influence functions and pulls the result back towards the noisy
//! input. All stages are trained jointly with analytic gradients.

pub mod block_matching;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod image;
pub mod metrics;
pub mod nonlocal;
pub mod param;
pub mod pgm;
pub mod synth;
pub mod training;

pub use block_matching::{compute_neighbor_table, NeighborTable};
pub use config::RunConfig;
pub use diffusion::{
    denoise, denoise_with_table, DiffusionModel, Hyperparameters, StageParameters,
};
pub use error::{Error, Result};
pub use image::{add_gaussian_noise, convolve, Image, Kernel};
pub use metrics::{psnr, ssim};
