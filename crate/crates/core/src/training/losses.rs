//! Adversarial objectives on discriminator logits.
//!
//! The classic pair works on clamped sigmoid probabilities; the
//! non-saturating pair uses `softplus`, which never overflows. Every loss is
//! a batch mean, so it does not depend on sample order.

use crate::autodiff::{grad_norm_sq, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Probability clamp used by the classic losses: `[1e-7, 1 - 1e-7]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// `mean softplus(-d_fake)`.
pub fn g_loss_nonsat<'t, T: Scalar>(d_fake: Var<'t, T>) -> Var<'t, T> {
    d_fake.neg().softplus().mean_all()
}

/// Terms of the discriminator objective.
#[derive(Clone, Copy, Debug)]
pub struct DLoss<'t, T> {
    pub total: Var<'t, T>,
    /// Adversarial part without the penalty.
    pub adversarial: Var<'t, T>,
    /// `(gamma / 2) * mean ‖∇_x D(x)‖²`; `None` when `gamma == 0`.
    pub r1: Option<Var<'t, T>>,
}

/// ```text
/// mean softplus(-d_real) + mean softplus(d_fake)
///   + (gamma / 2) * ‖∂ sum(d_real) / ∂ x_real‖² / N
/// ```
///
/// with `N` the number of real logits. The penalty needs a second-order
/// tape.
pub fn d_loss_nonsat_r1<'t, T: Scalar>(
    d_real: Var<'t, T>,
    d_fake: Var<'t, T>,
    x_real: Var<'t, T>,
    gamma: f64,
    tape: &'t Tape<T>,
) -> Result<DLoss<'t, T>> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Config(format!(
            "gamma must be finite and >= 0, got {gamma}"
        )));
    }
    if gamma > 0.0 && !tape.is_second_order() {
        return Err(Error::Config(
            "an R1 penalty (gamma > 0) needs a second-order tape".into(),
        ));
    }
    let adversarial = d_real
        .neg()
        .softplus()
        .mean_all()
        .add(d_fake.softplus().mean_all())?;
    if gamma == 0.0 {
        return Ok(DLoss {
            total: adversarial,
            adversarial,
            r1: None,
        });
    }
    let n = d_real.value().numel() as f64;
    let r1 = grad_norm_sq(tape, d_real.sum_all(), x_real)?.scale(0.5 * gamma / n);
    Ok(DLoss {
        total: adversarial.add(r1)?,
        adversarial,
        r1: Some(r1),
    })
}

/// `-mean log(clamp(sigmoid(d_fake)))`.
pub fn g_loss_classic<'t, T: Scalar>(d_fake: Var<'t, T>) -> Var<'t, T> {
    d_fake.log_sigmoid_clamped(PROB_CLAMP).mean_all().neg()
}

/// `-mean log(clamp(sigmoid(d_real))) - mean log(1 - clamp(sigmoid(d_fake)))`.
///
/// `1 - clamp(sigmoid(d), lo, 1 - lo) = clamp(sigmoid(-d), lo, 1 - lo)`, so
/// the second term is a clamped log-sigmoid of `-d_fake`.
pub fn d_loss_classic<'t, T: Scalar>(d_real: Var<'t, T>, d_fake: Var<'t, T>) -> Result<Var<'t, T>> {
    let real = d_real.log_sigmoid_clamped(PROB_CLAMP).mean_all();
    let fake = d_fake.neg().log_sigmoid_clamped(PROB_CLAMP).mean_all();
    Ok(real.add(fake)?.neg())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use std::f64::consts::LN_2;

    fn logits<'t>(tape: &'t Tape<f64>, v: &[f64]) -> Var<'t, f64> {
        tape.leaf(Tensor::from_f64(&[v.len(), 1], v).unwrap())
    }

    #[test]
    fn substitution_values() {
        let tape = Tape::new();
        let z = logits(&tape, &[0.0]);
        assert_eq!(g_loss_nonsat(z).value().item(), LN_2);
        assert!((g_loss_classic(z).value().item() - LN_2).abs() < 1e-15);
        assert!((d_loss_classic(z, z).unwrap().value().item() - 2.0 * LN_2).abs() < 1e-15);
        let d = d_loss_nonsat_r1(z, z, z, 0.0, &tape).unwrap();
        assert_eq!(d.total.value().item(), 2.0 * LN_2);
        assert!(d.r1.is_none());
    }

    #[test]
    fn large_logit_limit() {
        let tape = Tape::new();
        let v = g_loss_nonsat(logits(&tape, &[100.0])).value().item();
        assert!(v > 0.0 && v <= 1e-40, "{v}");
        let v = g_loss_nonsat(logits(&tape, &[-1e4])).value().item();
        assert_eq!(v, 1e4);
    }

    #[test]
    fn gamma_needs_second_order_tape() {
        let tape = Tape::new();
        let z = logits(&tape, &[0.5]);
        assert!(matches!(
            d_loss_nonsat_r1(z, z, z, 0.1, &tape),
            Err(Error::Config(_))
        ));
        assert!(d_loss_nonsat_r1(z, z, z, -1.0, &tape).is_err());
    }

    #[test]
    fn sum_discriminator_penalty_is_half_gamma_numel() {
        let tape = Tape::second_order();
        let x = tape.leaf(Tensor::from_f64(&[1, 2, 3, 3], &[0.3; 18]).unwrap());
        let d_real = x.sum_all();
        let d_fake = tape.constant(Tensor::scalar(0.0));
        let d = d_loss_nonsat_r1(d_real, d_fake, x, 2.0, &tape).unwrap();
        assert_eq!(d.r1.unwrap().value().item(), 18.0);
    }

    #[test]
    fn permutation_invariant() {
        let tape = Tape::new();
        let a = logits(&tape, &[0.3, -1.2, 2.5, 0.0]);
        let b = logits(&tape, &[2.5, 0.0, 0.3, -1.2]);
        let close = |x: Var<f64>, y: Var<f64>| (x.value().item() - y.value().item()).abs() < 1e-15;
        assert!(close(g_loss_nonsat(a), g_loss_nonsat(b)));
        assert!(close(g_loss_classic(a), g_loss_classic(b)));
        assert!(close(
            d_loss_classic(a, a).unwrap(),
            d_loss_classic(b, b).unwrap()
        ));
    }
}
