//! Generator blocks. Every block doubles the spatial resolution and emits
//! one intermediate RGB image.

use crate::autodiff::{concat_channels, Var};
use crate::error::{Error, Result};
use crate::kernels::Resample;
use crate::params::{Init, ParamKind, ParamLayout};
use crate::tensor::{Scalar, Tensor};

use super::config::BlockVariant;
use super::modconv::{to_rgb, ModulatedConv};

pub struct BlockOutput<'t, T> {
    /// Feature passed on to the next block (`f_o` for squeeze blocks).
    pub features: Var<'t, T>,
    /// Intermediate image `I_j`.
    pub image: Var<'t, T>,
    /// Modulated feature `f_j'` that entered toRGB.
    pub rgb_input: Var<'t, T>,
    pub squeeze: Option<SqueezeIntermediates<'t, T>>,
}

pub struct SqueezeIntermediates<'t, T> {
    pub f_i: Var<'t, T>,
    pub f_s: Var<'t, T>,
    pub f_e: Var<'t, T>,
}

/// The 4x4 block: learned constant, one 3x3 conv, toRGB. Shared by all
/// variants.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseBlock {
    pub channels: usize,
    pub const_input: usize,
    pub conv: ModulatedConv,
    pub to_rgb: ModulatedConv,
}

impl BaseBlock {
    pub fn declare(layout: &mut ParamLayout, channels: usize, style_dim: usize) -> Self {
        layout.set_block(Some(4));
        let const_input = layout.declare(
            "b4.const",
            &[1, channels, 4, 4],
            Init::Const(0.1),
            ParamKind::ConstInput,
        );
        let conv = ModulatedConv::declare(
            layout, "b4.conv", channels, channels, 3, true, true, style_dim,
        );
        let to_rgb = ModulatedConv::declare_to_rgb(layout, "b4.torgb", channels, style_dim);
        layout.set_block(None);
        BaseBlock {
            channels,
            const_input,
            conv,
            to_rgb,
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        vars: &[Var<'t, T>],
        w: Var<'t, T>,
    ) -> Result<BlockOutput<'t, T>> {
        let n = w.shape()[0];
        let c = self.channels;
        // tile the constant over the batch: ones[N,1] @ const[1, C*16]
        let ones = w.tape().constant(Tensor::ones(&[n, 1]));
        let x = ones
            .matmul(vars[self.const_input].reshape(&[1, c * 16])?, false, false)?
            .reshape(&[n, c, 4, 4])?;
        let x = self.conv.forward(vars, x, w)?.out;
        let (image, rgb_input) = to_rgb(&self.to_rgb, vars, x, w)?;
        Ok(BlockOutput {
            features: x,
            image,
            rgb_input,
            squeeze: None,
        })
    }
}

/// Baseline block: upsample, two modulated 3x3 convs, toRGB.
#[derive(Clone, Debug, PartialEq)]
pub struct SkipBlock {
    pub resolution: usize,
    pub conv0: ModulatedConv,
    pub conv1: ModulatedConv,
    pub to_rgb: ModulatedConv,
}

impl SkipBlock {
    pub fn forward<'t, T: Scalar>(
        &self,
        vars: &[Var<'t, T>],
        f_prev: Var<'t, T>,
        w: Var<'t, T>,
        up: Resample,
    ) -> Result<BlockOutput<'t, T>> {
        let x = f_prev.resample(up, false)?;
        let x = self.conv0.forward(vars, x, w)?.out;
        let x = self.conv1.forward(vars, x, w)?.out;
        let (image, rgb_input) = to_rgb(&self.to_rgb, vars, x, w)?;
        Ok(BlockOutput {
            features: x,
            image,
            rgb_input,
            squeeze: None,
        })
    }
}

/// Which squeeze-block feature feeds toRGB.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RgbTap {
    Inner,
    Squeezed,
    Excited,
}

/// Squeeze block:
///
/// ```text
/// f_i = conv3x3(up(f_prev))          c channels
/// f_s = conv3x3(f_i)                 c/r channels
/// f_e = conv3x3(f_s)                 c channels
/// f_o = conv1x1(concat(f_i, f_e))    c channels   (f_o = f_e without blend)
/// I   = toRGB(f_s | f_i | f_e)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct SqueezeBlock {
    pub resolution: usize,
    pub ratio: usize,
    pub tap: RgbTap,
    pub up_conv: ModulatedConv,
    pub squeeze: ModulatedConv,
    pub excite: ModulatedConv,
    pub blend: Option<ModulatedConv>,
    pub to_rgb: ModulatedConv,
}

impl SqueezeBlock {
    pub fn forward<'t, T: Scalar>(
        &self,
        vars: &[Var<'t, T>],
        f_prev: Var<'t, T>,
        w: Var<'t, T>,
        up: Resample,
    ) -> Result<BlockOutput<'t, T>> {
        let x = f_prev.resample(up, false)?;
        let f_i = self.up_conv.forward(vars, x, w)?.out;
        let f_s = self.squeeze.forward(vars, f_i, w)?.out;
        let f_e = self.excite.forward(vars, f_s, w)?.out;
        let f_o = match &self.blend {
            Some(blend) => blend.forward(vars, concat_channels(&[f_i, f_e])?, w)?.out,
            None => f_e,
        };
        let tapped = match self.tap {
            RgbTap::Inner => f_i,
            RgbTap::Squeezed => f_s,
            RgbTap::Excited => f_e,
        };
        let (image, rgb_input) = to_rgb(&self.to_rgb, vars, tapped, w)?;
        Ok(BlockOutput {
            features: f_o,
            image,
            rgb_input,
            squeeze: Some(SqueezeIntermediates { f_i, f_s, f_e }),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SynthesisBlock {
    Skip(SkipBlock),
    Squeeze(SqueezeBlock),
}

impl SynthesisBlock {
    /// Declares the parameters of one upsampling block taking `in_ch`
    /// channels to `out_ch` at `resolution`.
    #[allow(clippy::too_many_arguments)]
    pub fn declare(
        layout: &mut ParamLayout,
        resolution: usize,
        variant: BlockVariant,
        in_ch: usize,
        out_ch: usize,
        ratio: usize,
        style_dim: usize,
    ) -> Result<Self> {
        let p = format!("b{resolution}");
        layout.set_block(Some(resolution));
        let block = match variant {
            BlockVariant::SkipConnection => SynthesisBlock::Skip(SkipBlock {
                resolution,
                conv0: ModulatedConv::declare(
                    layout,
                    &format!("{p}.conv0"),
                    in_ch,
                    out_ch,
                    3,
                    true,
                    true,
                    style_dim,
                ),
                conv1: ModulatedConv::declare(
                    layout,
                    &format!("{p}.conv1"),
                    out_ch,
                    out_ch,
                    3,
                    true,
                    true,
                    style_dim,
                ),
                to_rgb: ModulatedConv::declare_to_rgb(
                    layout,
                    &format!("{p}.torgb"),
                    out_ch,
                    style_dim,
                ),
            }),
            _ => {
                if ratio == 0 || !out_ch.is_multiple_of(ratio) {
                    layout.set_block(None);
                    return Err(Error::Config(format!(
                        "squeeze ratio {ratio} does not divide {out_ch} channels at resolution {resolution}"
                    )));
                }
                let c = out_ch;
                let cs = c / ratio;
                let tap = match variant {
                    BlockVariant::SqueezeRgbBeforeSqueeze => RgbTap::Inner,
                    BlockVariant::SqueezeRgbAfterExcite => RgbTap::Excited,
                    _ => RgbTap::Squeezed,
                };
                let up_conv = ModulatedConv::declare(
                    layout,
                    &format!("{p}.up_conv"),
                    in_ch,
                    c,
                    3,
                    true,
                    true,
                    style_dim,
                );
                let squeeze = ModulatedConv::declare(
                    layout,
                    &format!("{p}.squeeze"),
                    c,
                    cs,
                    3,
                    true,
                    true,
                    style_dim,
                );
                let excite = ModulatedConv::declare(
                    layout,
                    &format!("{p}.excite"),
                    cs,
                    c,
                    3,
                    true,
                    true,
                    style_dim,
                );
                let blend = (variant != BlockVariant::SqueezeNoFbp).then(|| {
                    ModulatedConv::declare(
                        layout,
                        &format!("{p}.blend"),
                        2 * c,
                        c,
                        1,
                        true,
                        false,
                        style_dim,
                    )
                });
                let rgb_in = if tap == RgbTap::Squeezed { cs } else { c };
                let to_rgb =
                    ModulatedConv::declare_to_rgb(layout, &format!("{p}.torgb"), rgb_in, style_dim);
                SynthesisBlock::Squeeze(SqueezeBlock {
                    resolution,
                    ratio,
                    tap,
                    up_conv,
                    squeeze,
                    excite,
                    blend,
                    to_rgb,
                })
            }
        };
        layout.set_block(None);
        Ok(block)
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        vars: &[Var<'t, T>],
        f_prev: Var<'t, T>,
        w: Var<'t, T>,
        up: Resample,
    ) -> Result<BlockOutput<'t, T>> {
        match self {
            SynthesisBlock::Skip(b) => b.forward(vars, f_prev, w, up),
            SynthesisBlock::Squeeze(b) => b.forward(vars, f_prev, w, up),
        }
    }

    pub fn resolution(&self) -> usize {
        match self {
            SynthesisBlock::Skip(b) => b.resolution,
            SynthesisBlock::Squeeze(b) => b.resolution,
        }
    }

    pub fn to_rgb(&self) -> &ModulatedConv {
        match self {
            SynthesisBlock::Skip(b) => &b.to_rgb,
            SynthesisBlock::Squeeze(b) => &b.to_rgb,
        }
    }

    /// Non-toRGB convolutions in forward order.
    pub fn convs(&self) -> Vec<&ModulatedConv> {
        match self {
            SynthesisBlock::Skip(b) => vec![&b.conv0, &b.conv1],
            SynthesisBlock::Squeeze(b) => {
                let mut v = vec![&b.up_conv, &b.squeeze, &b.excite];
                v.extend(b.blend.as_ref());
                v
            }
        }
    }
}
