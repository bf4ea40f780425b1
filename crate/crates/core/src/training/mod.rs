//! Adversarial training at desk scale: losses, a residual discriminator,
//! a procedural dataset and a deterministic training loop.

pub mod data;
pub mod discriminator;
pub mod losses;
pub mod optim;
pub mod train;

pub use data::ToyDatasetSpec;
pub use discriminator::{build_discriminator, DBlock, Discriminator, Layer};
pub use losses::{
    d_loss_classic, d_loss_nonsat_r1, g_loss_classic, g_loss_nonsat, DLoss, PROB_CLAMP,
};
pub use optim::{ema_beta, ema_update, global_norm, Adam};
pub use train::{
    per_pixel_std, step_latents, train, train_with, LossConfig, LossKind, StepRecord, TrainHistory,
    TrainOutcome, HISTORY_HEADER,
};
