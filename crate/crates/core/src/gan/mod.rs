//! Convolutional GAN for synthetic road imagery.
//!
//! Images are `[3, H, W]` tensors in `[0, 1]`; the generator ends in a
//! sigmoid and the discriminator outputs the probability that its input is
//! real. Training alternates one discriminator and one generator update per
//! batch.

mod model;
mod sample;
mod train;

pub use model::{
    build_discriminator, build_generator, discriminator_loss, generator_loss, Discriminator, GanConfig, Generator,
    IMAGE_CHANNELS, LEAKY_SLOPE,
};
pub use sample::{sample, sample_grid, striped_images, tensor_to_rgb};
pub use train::{stack, train_gan, write_step_log_csv, GanOutcome, GanTrainer, StepRecord};
