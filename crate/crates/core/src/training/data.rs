use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Procedural two-blob RGB images in `[-1, 1]` on a `-1` background.
///
/// Sample `i` is drawn from ChaCha8 stream `i` of `seed`, so every sample
/// is reproducible on its own and batches can be built in any order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyDatasetSpec {
    pub resolution: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        ToyDatasetSpec {
            resolution: 16,
            seed: 0,
            batch_size: 16,
        }
    }
}

impl ToyDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 4 || !self.resolution.is_power_of_two() {
            return Err(Error::Config(format!(
                "toy resolution must be a power of two >= 4, got {}",
                self.resolution
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }

    /// Sample `index` as `[1, 3, R, R]`.
    pub fn sample<T: Scalar>(&self, index: u64) -> Tensor<T> {
        let r = self.resolution;
        let rf = r as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let mut img = vec![-1.0f64; 3 * r * r];
        for _ in 0..2 {
            let cx = rng.random_range(0.2 * rf..0.8 * rf);
            let cy = rng.random_range(0.2 * rf..0.8 * rf);
            let radius = rng.random_range(0.12 * rf..0.3 * rf);
            let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.6..1.0));
            for y in 0..r {
                for x in 0..r {
                    let dx = x as f64 + 0.5 - cx;
                    let dy = y as f64 + 0.5 - cy;
                    // one-pixel soft edge
                    let a = (radius + 0.5 - (dx * dx + dy * dy).sqrt()).clamp(0.0, 1.0);
                    for (ch, &col) in color.iter().enumerate() {
                        let p = &mut img[(ch * r + y) * r + x];
                        *p += a * (col - *p);
                    }
                }
            }
        }
        Tensor::from_parts(vec![1, 3, r, r], img.into_iter().map(T::of).collect())
    }

    /// Minibatch `step`: samples `step * B .. (step + 1) * B`.
    pub fn batch<T: Scalar>(&self, step: u64) -> Tensor<T> {
        let b = self.batch_size as u64;
        let items: Vec<Tensor<T>> = (step * b..(step + 1) * b).map(|i| self.sample(i)).collect();
        Tensor::cat_batch(&items).expect("samples share one shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_in_range() {
        let d = ToyDatasetSpec::default();
        let a: Tensor<f32> = d.sample(3);
        assert_eq!(a, d.sample(3));
        assert_ne!(a, d.sample(4));
        assert!(a.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        // background corner stays untouched often enough to be -1 somewhere
        assert!(a.data().contains(&-1.0));
        assert!(a.data().iter().any(|&v| v > -0.5));
    }

    #[test]
    fn batches_are_consecutive_samples() {
        let d = ToyDatasetSpec {
            batch_size: 3,
            ..Default::default()
        };
        let b: Tensor<f64> = d.batch(2);
        assert_eq!(b.shape(), [3, 3, 16, 16]);
        assert_eq!(b.batch_item(1), d.sample::<f64>(7));
    }

    #[test]
    fn seed_changes_samples() {
        let a = ToyDatasetSpec::default();
        let b = ToyDatasetSpec { seed: 1, ..a };
        assert_ne!(a.sample::<f64>(0), b.sample::<f64>(0));
    }
}
