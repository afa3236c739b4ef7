//! Convolutional autoencoder with a content-weighted bit allocation.
//!
//! An analysis network maps a 3-channel image to a bounded feature cuboid
//! at 1/8 spatial resolution, a sibling head predicts a single-channel
//! importance map over the same grid, and a synthesis network mirrors the
//! analysis path back to pixels with depth-to-space upsampling.  The
//! importance map decides, per position, how many feature channels survive;
//! everything here trains jointly with the channel quantizer.

mod blocks;
mod loss;
mod msssim;
mod nets;
mod train;

pub use blocks::{DenseChain, SubBlock};
pub use loss::{mse_loss, mse_loss_backward, psnr_db, PSNR_CAP_DB};
pub use msssim::{ms_ssim_loss, ms_ssim_loss_backward, DEFAULT_MS_SSIM_SCALES};
pub use nets::{check_image, DecoderNet, EncoderNet, ImportanceNet, NetworkConfig, SPATIAL_RATIO};
pub use train::{
    train_autoencoder, DistortionKind, ModelBundle, StepMetrics, Trainer, TrainerOptions,
    DEFAULT_LR_LADDER, DEFAULT_PATIENCE,
};
