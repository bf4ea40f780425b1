//! Image skip connections as one wide 1x1 projection.
//!
//! A skip-connection generator emits `I_j = W_j^T f_j'` at every resolution
//! and sums the progressively upsampled images. Because upsampling acts per
//! channel and commutes with a 1x1 projection, the same image results from
//! upsampling every modulated feature `f_j'` to the output size, stacking
//! them into `f_a'` and applying the stacked matrix `W_a` once.
//! [`verify_equivalence`] runs both computations on real generator
//! intermediates and reports how far apart they land.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{self, Resample};
use crate::synthesis::{BlockVariant, Generator, GeneratorConfig, UpsampleMode};
use crate::tensor::{nchw, Scalar, Tensor};

/// Progressive upsample-and-add of `I_1 .. I_J`.
pub fn aggregate_direct<T: Scalar>(images: &[Tensor<T>], up: Resample) -> Result<Tensor<T>> {
    check_chain("aggregate_direct", images)?;
    let mut acc = images[0].clone();
    for img in &images[1..] {
        let lifted = kernels::resample(&acc, up, false)?;
        acc = lifted.zip_map(img, |a, b| a + b)?;
    }
    Ok(acc)
}

/// Every tensor must be NCHW with the batch size of the first and twice
/// the spatial size of its predecessor.
fn check_chain<T: Scalar>(op: &'static str, xs: &[Tensor<T>]) -> Result<()> {
    let first = xs
        .first()
        .ok_or_else(|| Error::shape(op, "no levels given"))?;
    let (n0, _, mut h, mut w) = nchw(op, first.shape())?;
    for (j, x) in xs.iter().enumerate().skip(1) {
        let (n, _, hj, wj) = nchw(op, x.shape())?;
        if n != n0 || hj != 2 * h || wj != 2 * w {
            return Err(Error::shape(
                op,
                format!(
                    "resolution chain broken at level {}: {:?} after {h}x{w}",
                    j + 1,
                    x.shape()
                ),
            ));
        }
        (h, w) = (hj, wj);
    }
    Ok(())
}

/// The stacked projection `W_a` together with the stacked feature `f_a'`.
#[derive(Clone, Debug)]
pub struct AggregatedProjection<T> {
    /// `(sum_j c_j) x 3`; rows `offset_j .. offset_j + c_j` hold `W_j`.
    pub w_a: Tensor<T>,
    /// `N x (sum_j c_j) x H x W`, channel blocks in the same order as `w_a`.
    pub f_a: Tensor<T>,
    /// Channel count of each block, in concatenation order.
    pub blocks: Vec<usize>,
    /// Sum of the toRGB biases.
    pub bias: Tensor<T>,
}

impl<T: Scalar> AggregatedProjection<T> {
    /// `features[j]` is the modulated feature that entered toRGB `j`,
    /// `rgb_weights[j]` that layer's `3 x c_j x 1 x 1` kernel.
    pub fn build(
        features: &[Tensor<T>],
        rgb_weights: &[Tensor<T>],
        rgb_biases: Option<&[Tensor<T>]>,
        up: Resample,
    ) -> Result<Self> {
        check_chain("aggregate_concat", features)?;
        if rgb_weights.len() != features.len() {
            return Err(Error::shape(
                "aggregate_concat",
                format!(
                    "{} features but {} toRGB kernels",
                    features.len(),
                    rgb_weights.len()
                ),
            ));
        }
        let levels = features.len();
        let mut blocks = Vec::with_capacity(levels);
        for (j, (f, wj)) in features.iter().zip(rgb_weights).enumerate() {
            let c = f.shape()[1];
            if wj.shape() != [3, c, 1, 1] {
                return Err(Error::shape(
                    "aggregate_concat",
                    format!(
                        "channel-order mismatch at level {}: feature has {c} channels, kernel is {:?}",
                        j + 1,
                        wj.shape()
                    ),
                ));
            }
            blocks.push(c);
        }
        let total: usize = blocks.iter().sum();

        let mut lifted = Vec::with_capacity(levels);
        for (j, f) in features.iter().enumerate() {
            let mut x = f.clone();
            for _ in 0..levels - 1 - j {
                x = kernels::resample(&x, up, false)?;
            }
            lifted.push(x);
        }
        let refs: Vec<&Tensor<T>> = lifted.iter().collect();
        let f_a = kernels::concat_channels(&refs)?;

        let mut w_a = Vec::with_capacity(total * 3);
        for (wj, &c) in rgb_weights.iter().zip(&blocks) {
            for i in 0..c {
                for o in 0..3 {
                    w_a.push(wj.data()[o * c + i]);
                }
            }
        }
        let w_a = Tensor::new(&[total, 3], w_a)?;

        let mut bias = [T::zero(); 3];
        if let Some(bs) = rgb_biases {
            if bs.len() != levels {
                return Err(Error::shape(
                    "aggregate_concat",
                    format!("{levels} levels but {} toRGB biases", bs.len()),
                ));
            }
            for b in bs {
                if b.shape() != [3] {
                    return Err(Error::shape(
                        "aggregate_concat",
                        format!("toRGB bias {:?}", b.shape()),
                    ));
                }
                for (acc, &v) in bias.iter_mut().zip(b.data()) {
                    *acc += v;
                }
            }
        }
        Ok(AggregatedProjection {
            w_a,
            f_a,
            blocks,
            bias: Tensor::new(&[3], bias.to_vec())?,
        })
    }

    pub fn channels(&self) -> usize {
        self.w_a.shape()[0]
    }

    /// `W_a^T f_a'(x, y) + b` at every pixel.
    pub fn apply(&self) -> Result<Tensor<T>> {
        let total = self.channels();
        let mut kernel = vec![T::zero(); 3 * total];
        for i in 0..total {
            for o in 0..3 {
                kernel[o * total + i] = self.w_a.data()[i * 3 + o];
            }
        }
        let kernel = Tensor::new(&[3, total, 1, 1], kernel)?;
        let y = kernels::conv2d(&self.f_a, &kernel, None, 0)?;
        kernels::add_bias(&y, &self.bias)
    }
}

/// Image from a single projection of the stacked, upsampled features.
pub fn aggregate_concat<T: Scalar>(
    features: &[Tensor<T>],
    rgb_weights: &[Tensor<T>],
    rgb_biases: Option<&[Tensor<T>]>,
    up: Resample,
) -> Result<Tensor<T>> {
    AggregatedProjection::build(features, rgb_weights, rgb_biases, up)?.apply()
}

/// Channel count of `f_a'`: the sum of the channel map over all
/// resolutions.
pub fn concat_channel_total(config: &GeneratorConfig) -> usize {
    config
        .resolutions()
        .iter()
        .map(|&r| config.channels(r))
        .sum()
}

#[derive(Clone, Debug)]
pub struct EquivalenceReport {
    pub resolution: usize,
    pub upsample: UpsampleMode,
    pub precision: &'static str,
    pub trials: usize,
    pub tol: f64,
    pub seed: u64,
    pub concat_channels: usize,
    /// Max absolute difference between the two aggregations, per trial.
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
    /// Max absolute difference between the direct aggregation and the
    /// generator's own output image.
    pub generator_deviation: f64,
    pub passed: bool,
}

impl EquivalenceReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "skip-connection equivalence check");
        let _ = writeln!(
            s,
            "  resolution {}x{}, {} upsampling, {} precision, seed {}",
            self.resolution,
            self.resolution,
            self.upsample.key(),
            self.precision,
            self.seed
        );
        let _ = writeln!(
            s,
            "  concatenated feature channels: {}",
            self.concat_channels
        );
        let _ = writeln!(s, "  trials: {}", self.trials);
        let _ = writeln!(s, "  max |direct - concat|: {:.3e}", self.max_deviation);
        let _ = writeln!(
            s,
            "  max |direct - generator|: {:.3e}",
            self.generator_deviation
        );
        let _ = writeln!(s, "  tolerance: {:.3e}", self.tol);
        let _ = writeln!(s, "  result: {}", if self.passed { "PASS" } else { "FAIL" });
        s
    }

    /// Line-oriented `key=value` form.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "resolution={}", self.resolution);
        let _ = writeln!(s, "upsample={}", self.upsample.key());
        let _ = writeln!(s, "precision={}", self.precision);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "trials={}", self.trials);
        let _ = writeln!(s, "concat_channels={}", self.concat_channels);
        let _ = writeln!(s, "max_deviation={:e}", self.max_deviation);
        let _ = writeln!(s, "generator_deviation={:e}", self.generator_deviation);
        let _ = writeln!(s, "tol={:e}", self.tol);
        let _ = writeln!(s, "passed={}", self.passed);
        s
    }
}

/// Runs `trials` random latents through a skip-connection generator and
/// compares [`aggregate_direct`] with [`aggregate_concat`] on the exposed
/// intermediates. Parameters come from `seed`; trial `t` draws its latent
/// from stream `t + 1` of the same seed.
pub fn verify_equivalence<T: Scalar>(
    config: &GeneratorConfig,
    trials: usize,
    tol: f64,
    seed: u64,
) -> Result<EquivalenceReport> {
    if config.variant != BlockVariant::SkipConnection {
        return Err(Error::Config(format!(
            "the equivalence check applies to the skip-connection generator, not `{}`",
            config.variant
        )));
    }
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::Config(format!(
            "tolerance must be non-negative, got {tol}"
        )));
    }
    let g = Generator::new(config.clone())?;
    let params = g.init_params::<T, _>(&mut ChaCha8Rng::seed_from_u64(seed));
    let up = config.upsample.resample();
    let mut deviations = Vec::with_capacity(trials);
    let mut generator_deviation = 0.0f64;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64 + 1);
        let z = Tensor::<T>::randn(&[1, config.style_dim], 1.0, &mut rng);
        let snap = g.generator_forward(&params, &z)?;
        let direct = aggregate_direct(&snap.images, up)?;
        let concat = aggregate_concat(
            &snap.features,
            &snap.rgb_weights,
            Some(&snap.rgb_biases),
            up,
        )?;
        deviations.push(direct.max_abs_diff(&concat));
        generator_deviation = generator_deviation.max(direct.max_abs_diff(&snap.image));
    }
    let max_deviation = deviations.iter().copied().fold(0.0, f64::max);
    let passed = deviations.iter().all(|d| d.is_finite() && *d <= tol);
    Ok(EquivalenceReport {
        resolution: config.resolution,
        upsample: config.upsample,
        precision: T::NAME,
        trials,
        tol,
        seed,
        concat_channels: concat_channel_total(config),
        deviations,
        max_deviation,
        generator_deviation,
        passed,
    })
}
