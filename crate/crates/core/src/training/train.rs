use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::params::Params;
use crate::synthesis::{Generator, GeneratorConfig};
use crate::tensor::{Scalar, Tensor};

use super::data::ToyDatasetSpec;
use super::discriminator::{build_discriminator, Discriminator};
use super::losses::{d_loss_classic, d_loss_nonsat_r1, g_loss_classic, g_loss_nonsat};
use super::optim::{ema_beta, ema_update, global_norm, Adam};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossKind {
    /// Cross-entropy on clamped sigmoid probabilities.
    Classic,
    /// Softplus losses with an R1 penalty on real images.
    #[default]
    NonsatR1,
}

impl LossKind {
    pub fn key(self) -> &'static str {
        match self {
            LossKind::Classic => "classic",
            LossKind::NonsatR1 => "nonsat_r1",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classic" => Ok(LossKind::Classic),
            "nonsat_r1" => Ok(LossKind::NonsatR1),
            _ => Err(Error::Config(format!(
                "unknown loss `{s}` (expected classic or nonsat_r1)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// R1 weight; ignored by the classic loss.
    pub gamma: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Half-life, in steps, of the generator weight average.
    pub ema_halflife: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::NonsatR1,
            gamma: 0.1,
            learning_rate: 2.5e-3,
            beta1: 0.0,
            beta2: 0.99,
            ema_halflife: 50.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.ema_halflife >= 0.0) {
            return Err(Error::Config(format!(
                "ema half-life must be >= 0, got {}",
                self.ema_halflife
            )));
        }
        Ok(())
    }

    fn uses_r1(&self) -> bool {
        self.kind == LossKind::NonsatR1 && self.gamma > 0.0
    }
}

/// One optimisation step: a discriminator update followed by a generator
/// update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Penalty term included in `d_loss` (0 without R1).
    pub r1: f64,
    pub g_grad_norm: f64,
    pub d_grad_norm: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
}

pub const HISTORY_HEADER: &str = "step,d_loss,g_loss,r1,g_grad_norm,d_grad_norm";

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// CSV with a header line; floats use the shortest representation that
    /// parses back to the same value.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.steps {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.d_loss, r.g_loss, r.r1, r.g_grad_norm, r.d_grad_norm
            ));
        }
        s
    }

    /// Mean `|mean D(real) - mean D(fake)|` over the last `n` steps.
    pub fn mean_logit_gap(&self, n: usize) -> f64 {
        let tail = &self.steps[self.steps.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter()
            .map(|r| (r.d_real_mean - r.d_fake_mean).abs())
            .sum::<f64>()
            / tail.len() as f64
    }
}

/// Everything a training run produces.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub history: TrainHistory,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g: Params<T>,
    pub g_ema: Params<T>,
    pub d: Params<T>,
}

/// Latent batch for `step`; `phase` 0 feeds the discriminator update and
/// 1 the generator update.
pub fn step_latents<T: Scalar>(
    seed: u64,
    step: usize,
    phase: u64,
    n: usize,
    dim: usize,
) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 + 2 * step as u64 + phase);
    Tensor::randn(&[n, dim], 1.0, &mut rng)
}

fn finite(v: f64, step: usize, term: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{term} at step {step} ({v})")))
    }
}

fn mean(t: &Tensor<impl Scalar>) -> f64 {
    t.sum_f64() / t.numel() as f64
}

/// Alternating discriminator/generator training on the toy dataset.
///
/// Initial parameters come from ChaCha8 streams 0 (generator) and 1
/// (discriminator) of `seed`; latents from [`step_latents`]. The run is a
/// pure function of its arguments.
pub fn train<T: Scalar>(
    config: &GeneratorConfig,
    loss: &LossConfig,
    data: &ToyDatasetSpec,
    steps: usize,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    train_with(config, loss, data, steps, seed, |_| {})
}

/// [`train`] with a callback after every step.
pub fn train_with<T: Scalar>(
    config: &GeneratorConfig,
    loss: &LossConfig,
    data: &ToyDatasetSpec,
    steps: usize,
    seed: u64,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome<T>> {
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    loss.validate()?;
    data.validate()?;
    if data.resolution != config.resolution {
        return Err(Error::Config(format!(
            "dataset resolution {} does not match generator resolution {}",
            data.resolution, config.resolution
        )));
    }
    let generator = Generator::new(config.clone())?;
    let disc = build_discriminator(config.resolution, &config.channel_map)?;
    let mut g: Params<T> = generator.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut d_rng = ChaCha8Rng::seed_from_u64(seed);
    d_rng.set_stream(1);
    let mut d: Params<T> = disc.init_params(&mut d_rng);
    let mut g_ema = g.clone();
    let mut opt_g = Adam::new(&g, loss.learning_rate, loss.beta1, loss.beta2, 1e-8);
    let mut opt_d = Adam::new(&d, loss.learning_rate, loss.beta1, loss.beta2, 1e-8);
    let beta = ema_beta(loss.ema_halflife);
    let (n, dim) = (data.batch_size, config.style_dim);
    let mut history = TrainHistory::default();

    for step in 0..steps {
        let mut run_step = || -> Result<StepRecord> {
            let real: Tensor<T> = data.batch(step as u64);

            let (d_loss, r1, d_grad_norm, d_real_mean, d_fake_mean) = {
                let tape = if loss.uses_r1() {
                    Tape::second_order()
                } else {
                    Tape::new()
                };
                let gv = g.bind(&tape, false);
                let dv = d.bind(&tape, true);
                let z = tape.constant(step_latents(seed, step, 0, n, dim));
                let fake = generator.forward(&gv, z)?.image.detach();
                let x_real = tape.leaf(real);
                let d_real = disc.forward(&dv, x_real)?;
                let d_fake = disc.forward(&dv, fake)?;
                let (total, r1) = match loss.kind {
                    LossKind::NonsatR1 => {
                        let l = d_loss_nonsat_r1(d_real, d_fake, x_real, loss.gamma, &tape)?;
                        (l.total, l.r1.map_or(0.0, |v| v.value().item().f64()))
                    }
                    LossKind::Classic => (d_loss_classic(d_real, d_fake)?, 0.0),
                };
                let d_loss = finite(total.value().item().f64(), step, "d_loss")?;
                let r1 = finite(r1, step, "r1")?;
                let grads = tape.backward(total, false)?;
                let dg: Vec<Tensor<T>> = dv.iter().map(|&v| grads.tensor(v)).collect();
                let norm = finite(global_norm(&dg), step, "d_grad_norm")?;
                opt_d.update(&mut d, &dg)?;
                (
                    d_loss,
                    r1,
                    norm,
                    mean(&d_real.value()),
                    mean(&d_fake.value()),
                )
            };

            let (g_loss, g_grad_norm) = {
                let tape = Tape::new();
                let gv = g.bind(&tape, true);
                let dv = d.bind(&tape, false);
                let z = tape.constant(step_latents(seed, step, 1, n, dim));
                let fake = generator.forward(&gv, z)?.image;
                let d_fake = disc.forward(&dv, fake)?;
                let total = match loss.kind {
                    LossKind::NonsatR1 => g_loss_nonsat(d_fake),
                    LossKind::Classic => g_loss_classic(d_fake),
                };
                let g_loss = finite(total.value().item().f64(), step, "g_loss")?;
                let grads = tape.backward(total, false)?;
                let gg: Vec<Tensor<T>> = gv.iter().map(|&v| grads.tensor(v)).collect();
                let norm = finite(global_norm(&gg), step, "g_grad_norm")?;
                opt_g.update(&mut g, &gg)?;
                (g_loss, norm)
            };
            ema_update(&mut g_ema, &g, beta)?;

            Ok(StepRecord {
                step,
                d_loss,
                g_loss,
                r1,
                g_grad_norm,
                d_grad_norm,
                d_real_mean,
                d_fake_mean,
            })
        };
        let record = run_step().map_err(|e| match e {
            Error::NonFinite(m) if !m.contains(" at step ") => {
                Error::NonFinite(format!("{m} at step {step}"))
            }
            e => e,
        })?;
        on_step(&record);
        history.steps.push(record);
    }
    Ok(TrainOutcome {
        history,
        generator,
        discriminator: disc,
        g,
        g_ema,
        d,
    })
}

/// Mean over pixel positions of the standard deviation across the batch.
/// Zero when every sample is the same image.
pub fn per_pixel_std<T: Scalar>(images: &Tensor<T>) -> f64 {
    let n = images.shape()[0];
    let per = images.numel() / n;
    if n < 2 {
        return 0.0;
    }
    let d = images.data();
    let mut acc = 0.0;
    for p in 0..per {
        let m = (0..n).map(|i| d[i * per + p].f64()).sum::<f64>() / n as f64;
        let v = (0..n)
            .map(|i| (d[i * per + p].f64() - m).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        acc += v.sqrt();
    }
    acc / per as f64
}
