//! Style-modulated convolution.
//!
//! A layer turns the style vector `w` into per-input-channel scales
//! `s = A w + b_A`, scales the kernel by them and (optionally) renormalises
//! every output channel of the scaled kernel to unit L2 norm.
//!
//! On the tape the scaling is applied to the activations instead of the
//! kernel, which is the same linear map and lets a whole batch share one
//! convolution:
//!
//! ```text
//! conv(x, s_i * W) = conv(x * s, W)
//! demod[n, o]      = 1 / sqrt(sum_{i,kh,kw} (s[n,i] W[o,i,kh,kw])^2 + eps)
//! ```
//!
//! `x * s` is the modulated feature `f'` that the equivalence verifier needs
//! for toRGB layers.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Init, ParamKind, ParamLayout, Params};
use crate::tensor::{Scalar, Tensor};

pub const DEMOD_EPS: f64 = 1e-8;
pub const LRELU_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct ModulatedConv {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub demodulate: bool,
    pub activate: bool,
    pub eps: f64,
    pub weight: usize,
    pub bias: usize,
    pub affine_weight: usize,
    pub affine_bias: usize,
}

/// Output of [`ModulatedConv::forward`].
pub struct ModConvOutput<'t, T> {
    /// Input scaled by the style, `x * s`.
    pub modulated: Var<'t, T>,
    pub out: Var<'t, T>,
}

impl ModulatedConv {
    /// Declares a modulated conv's parameters. Kernels start as zero-mean
    /// normals with standard deviation `1/sqrt(fan_in)`; the style affine
    /// starts at bias 1 so initial scales sit around one.
    #[allow(clippy::too_many_arguments)]
    pub fn declare(
        layout: &mut ParamLayout,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        demodulate: bool,
        activate: bool,
        style_dim: usize,
    ) -> Self {
        let kinds = (ParamKind::ConvKernel, ParamKind::ConvBias);
        Self::declare_as(
            layout, prefix, in_ch, out_ch, kernel, demodulate, activate, style_dim, kinds,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn declare_as(
        layout: &mut ParamLayout,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        demodulate: bool,
        activate: bool,
        style_dim: usize,
        (wk, bk): (ParamKind, ParamKind),
    ) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let weight = layout.declare(
            format!("{prefix}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            Init::Normal {
                std: 1.0 / fan_in.sqrt(),
            },
            wk,
        );
        let bias = layout.declare(format!("{prefix}.bias"), &[out_ch], Init::Const(0.0), bk);
        let affine_weight = layout.declare(
            format!("{prefix}.affine.weight"),
            &[in_ch, style_dim],
            Init::Normal {
                std: 1.0 / (style_dim as f64).sqrt(),
            },
            ParamKind::AffineWeight,
        );
        let affine_bias = layout.declare(
            format!("{prefix}.affine.bias"),
            &[in_ch],
            Init::Const(1.0),
            ParamKind::AffineBias,
        );
        ModulatedConv {
            in_ch,
            out_ch,
            kernel,
            demodulate,
            activate,
            eps: DEMOD_EPS,
            weight,
            bias,
            affine_weight,
            affine_bias,
        }
    }

    /// 1x1, three outputs, modulation only, no activation.
    pub fn declare_to_rgb(
        layout: &mut ParamLayout,
        prefix: &str,
        in_ch: usize,
        style_dim: usize,
    ) -> Self {
        let kinds = (ParamKind::RgbKernel, ParamKind::RgbBias);
        Self::declare_as(layout, prefix, in_ch, 3, 1, false, false, style_dim, kinds)
    }

    pub fn is_to_rgb(&self) -> bool {
        self.kernel == 1 && !self.demodulate && !self.activate && self.out_ch == 3
    }

    pub fn kernel_numel(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel
    }

    /// Per-sample style scales `[N, in_ch]` from styles `[N, style_dim]`.
    pub fn styles<'t, T: Scalar>(&self, vars: &[Var<'t, T>], w: Var<'t, T>) -> Result<Var<'t, T>> {
        w.matmul(vars[self.affine_weight], false, true)?
            .add_bias(vars[self.affine_bias])
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        vars: &[Var<'t, T>],
        x: Var<'t, T>,
        w: Var<'t, T>,
    ) -> Result<ModConvOutput<'t, T>> {
        let xs = x.shape();
        if xs.len() != 4 || xs[1] != self.in_ch {
            return Err(Error::shape(
                "modulated conv",
                format!("input {xs:?}, layer expects {} channels", self.in_ch),
            ));
        }
        let s = self.styles(vars, w)?;
        let modulated = x.channel_scale(s)?;
        let weight = vars[self.weight];
        let mut y = modulated.conv2d(weight, None, self.kernel / 2)?;
        if self.demodulate {
            let tape: &Tape<T> = x.tape();
            let k2 = self.kernel * self.kernel;
            let ones = tape.constant(Tensor::ones(&[k2, 1]));
            let wsq = weight
                .square()
                .reshape(&[self.out_ch * self.in_ch, k2])?
                .matmul(ones, false, false)?
                .reshape(&[self.out_ch, self.in_ch])?;
            let d = s
                .square()
                .matmul(wsq, false, true)?
                .add_scalar(self.eps)
                .powf(-0.5)?;
            y = y.channel_scale(d)?;
        }
        y = y.add_bias(vars[self.bias])?;
        if self.activate {
            y = y.leaky_relu(LRELU_SLOPE);
        }
        Ok(ModConvOutput { modulated, out: y })
    }

    /// Style scales for a single style vector, off-tape.
    pub fn style_scales<T: Scalar>(&self, params: &Params<T>, w: &[T]) -> Result<Vec<T>> {
        let a = params.get(self.affine_weight);
        let b = params.get(self.affine_bias);
        let sd = a.shape()[1];
        if w.len() != sd {
            return Err(Error::shape(
                "style_scales",
                format!("style has {} entries, affine expects {sd}", w.len()),
            ));
        }
        Ok((0..self.in_ch)
            .map(|i| {
                let row = &a.data()[i * sd..(i + 1) * sd];
                let mut acc = T::zero();
                for (&p, &q) in row.iter().zip(w) {
                    acc += p * q;
                }
                acc + b.data()[i]
            })
            .collect())
    }

    /// Effective per-sample kernel for style `w`.
    pub fn effective_weight<T: Scalar>(&self, params: &Params<T>, w: &[T]) -> Result<Tensor<T>> {
        let s = self.style_scales(params, w)?;
        modulate_demodulate(params.get(self.weight), &s, self.demodulate, self.eps)
    }
}

/// `w'[o,i,..] = s[i] * weight[o,i,..]`; with `demodulate`, every output
/// channel is divided by `sqrt(sum w'^2 + eps)`.
pub fn modulate_demodulate<T: Scalar>(
    weight: &Tensor<T>,
    scales: &[T],
    demodulate: bool,
    eps: f64,
) -> Result<Tensor<T>> {
    let shape = weight.shape();
    if shape.len() != 4 || shape[1] != scales.len() {
        return Err(Error::shape(
            "modulate_demodulate",
            format!("weight {shape:?} with {} scales", scales.len()),
        ));
    }
    if scales.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("style scales".into()));
    }
    let (o, i, k2) = (shape[0], shape[1], shape[2] * shape[3]);
    let mut out = weight.to_vec();
    for oc in 0..o {
        let row = &mut out[oc * i * k2..(oc + 1) * i * k2];
        for (ic, chunk) in row.chunks_exact_mut(k2).enumerate() {
            for v in chunk {
                *v *= scales[ic];
            }
        }
        if demodulate {
            let ss: T = row.iter().map(|&v| v * v).sum();
            let d = T::one() / (ss + T::of(eps)).sqrt();
            for v in row.iter_mut() {
                *v *= d;
            }
        }
    }
    Tensor::new(shape, out)
}

/// Applies a toRGB layer: `I(x, y) = W^T f'(x, y) + b` with `f' = f * s`.
/// Returns `(image, f')`.
pub fn to_rgb<'t, T: Scalar>(
    layer: &ModulatedConv,
    vars: &[Var<'t, T>],
    f: Var<'t, T>,
    w: Var<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    if !layer.is_to_rgb() {
        return Err(Error::Config(format!(
            "toRGB must be a 1x1, 3-output layer without demodulation or activation \
             (kernel {}, outputs {}, demodulate {}, activate {})",
            layer.kernel, layer.out_ch, layer.demodulate, layer.activate
        )));
    }
    let o = layer.forward(vars, f, w)?;
    Ok((o.out, o.modulated))
}
