use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::{Scalar, Tensor};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &Params<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| vec![T::zero(); t.numel()])
                .collect()
        };
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut Params<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer got {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.step));
        let c2 = T::of(1.0 - self.beta2.powi(self.step));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        let one = T::one();
        for (i, g) in grads.iter().enumerate() {
            let p = params.get(i);
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("gradient {:?} for parameter {:?}", g.shape(), p.shape()),
                ));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut next = p.to_vec();
            for (j, (&gj, pj)) in g.data().iter().zip(next.iter_mut()).enumerate() {
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *pj = *pj - lr * mhat / (vhat.sqrt() + eps);
            }
            params.set(i, Tensor::new(p.shape(), next)?)?;
        }
        Ok(())
    }
}

/// Decay factor of an exponential moving average with the given half-life
/// in steps.
pub fn ema_beta(halflife: f64) -> f64 {
    if halflife <= 0.0 {
        0.0
    } else {
        0.5f64.powf(1.0 / halflife)
    }
}

/// `avg <- beta * avg + (1 - beta) * current`.
pub fn ema_update<T: Scalar>(avg: &mut Params<T>, current: &Params<T>, beta: f64) -> Result<()> {
    let b = T::of(beta);
    let ob = T::one() - b;
    for i in 0..avg.len() {
        let next = avg.get(i).zip_map(current.get(i), |a, c| b * a + ob * c)?;
        avg.set(i, next)?;
    }
    Ok(())
}

/// `sqrt(sum_i ‖g_i‖²)`.
pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads.iter().map(Tensor::norm_sq_f64).sum::<f64>().sqrt()
}
