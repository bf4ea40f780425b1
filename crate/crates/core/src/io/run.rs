use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::Params;
use crate::synthesis::Generator;
use crate::tensor::{Scalar, Tensor};
use crate::training::{build_discriminator, Discriminator, TrainOutcome};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;

pub const G_PREFIX: &str = "g.";
pub const G_EMA_PREFIX: &str = "g_ema.";
pub const D_PREFIX: &str = "d.";

/// A trained model restored from a checkpoint.
#[derive(Clone, Debug)]
pub struct SavedRun<T> {
    pub config: RunConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g: Params<T>,
    pub g_ema: Params<T>,
    pub d: Params<T>,
}

/// `n` unit-normal latents drawn from stream 0 of `seed`, one row each.
pub fn sample_latents<T: Scalar>(seed: u64, n: usize, dim: usize) -> Tensor<T> {
    Tensor::randn(&[n, dim], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Checkpoint holding the run configuration and all three parameter sets.
pub fn run_checkpoint<T: Scalar>(
    config: &RunConfig,
    outcome: &TrainOutcome<T>,
) -> Result<Checkpoint> {
    let mut ck = Checkpoint::with_config(&config.to_text());
    ck.push_params(G_PREFIX, &outcome.g)?;
    ck.push_params(G_EMA_PREFIX, &outcome.g_ema)?;
    ck.push_params(D_PREFIX, &outcome.d)?;
    Ok(ck)
}

/// Restores a run, validating every array against `expected` (or the
/// embedded configuration when `None`) before building any tensor.
pub fn load_run<T: Scalar>(ck: &Checkpoint, expected: Option<&RunConfig>) -> Result<SavedRun<T>> {
    let embedded = RunConfig::parse(&ck.config_text()?)?;
    let config = match expected {
        Some(c) => {
            if c.generator() != embedded.generator() {
                return Err(Error::Checkpoint(
                    "checkpoint was written for a different generator configuration".into(),
                ));
            }
            c.clone()
        }
        None => embedded,
    };
    let generator = Generator::new(config.generator())?;
    let discriminator = build_discriminator(config.resolution, &config.generator().channel_map)?;
    let g = ck.params(G_PREFIX, generator.layout())?;
    let g_ema = ck.params(G_EMA_PREFIX, generator.layout())?;
    let d = ck.params(D_PREFIX, discriminator.layout())?;
    Ok(SavedRun {
        config,
        generator,
        discriminator,
        g,
        g_ema,
        d,
    })
}
