use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::kernels::Resample;
use crate::params::{Init, ParamKind, ParamLayout, Params};
use crate::synthesis::{ChannelMap, LRELU_SLOPE};
use crate::tensor::{Scalar, Tensor};

/// `(weight, bias)` parameter indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layer {
    pub weight: usize,
    pub bias: usize,
}

/// Residual downsampling block:
/// `avgpool(lrelu(conv(lrelu(conv(x))))) + conv1x1(avgpool(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DBlock {
    pub resolution: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub conv0: Layer,
    pub conv1: Layer,
    /// Bias-free 1x1 projection on the skip branch.
    pub skip: usize,
}

/// Residual discriminator halving the resolution down to 2x2, then two
/// dense layers ending in one logit per image.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub resolution: usize,
    layout: ParamLayout,
    pub from_rgb: Layer,
    pub blocks: Vec<DBlock>,
    pub dense: Layer,
    pub out: Layer,
}

fn channels_at(map: &ChannelMap, res: usize) -> Result<usize> {
    map.get(&res.max(4)).copied().ok_or_else(|| {
        Error::Config(format!(
            "channel map has no entry for resolution {}",
            res.max(4)
        ))
    })
}

fn conv(layout: &mut ParamLayout, name: &str, i: usize, o: usize, k: usize) -> Layer {
    let fan_in = (i * k * k) as f64;
    Layer {
        weight: layout.declare(
            format!("{name}.weight"),
            &[o, i, k, k],
            Init::Normal {
                std: 1.0 / fan_in.sqrt(),
            },
            ParamKind::ConvKernel,
        ),
        bias: layout.declare(
            format!("{name}.bias"),
            &[o],
            Init::Const(0.0),
            ParamKind::ConvBias,
        ),
    }
}

fn dense(layout: &mut ParamLayout, name: &str, i: usize, o: usize) -> Layer {
    Layer {
        weight: layout.declare(
            format!("{name}.weight"),
            &[o, i],
            Init::Normal {
                std: 1.0 / (i as f64).sqrt(),
            },
            ParamKind::DenseWeight,
        ),
        bias: layout.declare(
            format!("{name}.bias"),
            &[o],
            Init::Const(0.0),
            ParamKind::DenseBias,
        ),
    }
}

/// Builds a discriminator for `resolution x resolution` RGB input. Block
/// widths follow `channel_map`; resolutions below 4 reuse the 4x4 width.
pub fn build_discriminator(resolution: usize, channel_map: &ChannelMap) -> Result<Discriminator> {
    if resolution < 4 || !resolution.is_power_of_two() {
        return Err(Error::Config(format!(
            "discriminator resolution must be a power of two >= 4, got {resolution}"
        )));
    }
    let mut layout = ParamLayout::new();
    let c0 = channels_at(channel_map, resolution)?;
    let from_rgb = conv(&mut layout, "from_rgb", 3, c0, 1);
    let mut blocks = Vec::new();
    let mut res = resolution;
    while res > 2 {
        let in_ch = channels_at(channel_map, res)?;
        let out_ch = channels_at(channel_map, res / 2)?;
        let p = format!("b{res}");
        let conv0 = conv(&mut layout, &format!("{p}.conv0"), in_ch, in_ch, 3);
        let conv1 = conv(&mut layout, &format!("{p}.conv1"), in_ch, out_ch, 3);
        let skip = layout.declare(
            format!("{p}.skip.weight"),
            &[out_ch, in_ch, 1, 1],
            Init::Normal {
                std: 1.0 / (in_ch as f64).sqrt(),
            },
            ParamKind::ConvKernel,
        );
        blocks.push(DBlock {
            resolution: res,
            in_ch,
            out_ch,
            conv0,
            conv1,
            skip,
        });
        res /= 2;
    }
    let c_last = channels_at(channel_map, 2)?;
    let dense_layer = dense(&mut layout, "dense", c_last * 4, c_last);
    let out = dense(&mut layout, "out", c_last, 1);
    Ok(Discriminator {
        resolution,
        layout,
        from_rgb,
        blocks,
        dense: dense_layer,
        out,
    })
}

impl DBlock {
    pub fn forward<'t, T: Scalar>(&self, vars: &[Var<'t, T>], x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x
            .conv2d(vars[self.conv0.weight], Some(vars[self.conv0.bias]), 1)?
            .leaky_relu(LRELU_SLOPE)
            .conv2d(vars[self.conv1.weight], Some(vars[self.conv1.bias]), 1)?
            .leaky_relu(LRELU_SLOPE)
            .resample(Resample::AvgPoolDown, false)?;
        let s = x
            .resample(Resample::AvgPoolDown, false)?
            .conv2d(vars[self.skip], None, 0)?;
        y.add(s)
    }
}

impl Discriminator {
    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn init_params<T: Scalar, R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Params<T> {
        Params::init(&self.layout, rng)
    }

    /// Logits `[N, 1]` for images `[N, 3, R, R]`.
    pub fn forward<'t, T: Scalar>(&self, vars: &[Var<'t, T>], x: Var<'t, T>) -> Result<Var<'t, T>> {
        if vars.len() != self.layout.len() {
            return Err(Error::Config(format!(
                "discriminator expects {} parameter arrays, got {}",
                self.layout.len(),
                vars.len()
            )));
        }
        let xs = x.shape();
        if xs.len() != 4 || xs[1] != 3 || xs[2] != self.resolution || xs[3] != self.resolution {
            return Err(Error::shape(
                "discriminator",
                format!(
                    "input {xs:?}, expected [N, 3, {r}, {r}]",
                    r = self.resolution
                ),
            ));
        }
        let n = xs[0];
        let mut h = x
            .conv2d(
                vars[self.from_rgb.weight],
                Some(vars[self.from_rgb.bias]),
                0,
            )?
            .leaky_relu(LRELU_SLOPE);
        for b in &self.blocks {
            h = b.forward(vars, h)?;
        }
        let flat = h.shape()[1..].iter().product();
        h.reshape(&[n, flat])?
            .matmul(vars[self.dense.weight], false, true)?
            .add_bias(vars[self.dense.bias])?
            .leaky_relu(LRELU_SLOPE)
            .matmul(vars[self.out.weight], false, true)?
            .add_bias(vars[self.out.bias])
    }

    /// Logits for plain tensors, off any caller tape.
    pub fn logits<T: Scalar>(&self, params: &Params<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = crate::autodiff::Tape::new();
        let vars = params.bind(&tape, false);
        Ok(self.forward(&vars, tape.constant(x.clone()))?.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::kernels;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (Discriminator, Params<f64>) {
        let map: ChannelMap = [(4, 8), (8, 6), (16, 4)].into_iter().collect();
        let d = build_discriminator(16, &map).unwrap();
        let p = d.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        (d, p)
    }

    fn images(n: usize, seed: u64) -> Tensor<f64> {
        Tensor::randn(&[n, 3, 16, 16], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn three_blocks_one_logit_per_image() {
        let (d, p) = toy();
        assert_eq!(d.blocks.len(), 3);
        assert_eq!(d.logits(&p, &images(5, 2)).unwrap().shape(), [5, 1]);
    }

    #[test]
    fn zero_weights_return_final_bias() {
        let (d, mut p) = toy();
        for (i, s) in d.layout().specs().iter().enumerate() {
            p.set(i, Tensor::zeros(&s.shape)).unwrap();
        }
        p.set(d.out.bias, Tensor::from_f64(&[1], &[0.75]).unwrap())
            .unwrap();
        let y = d.logits(&p, &images(3, 3)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn zero_conv_path_leaves_skip_branch() {
        let (d, mut p) = toy();
        let b = &d.blocks[0];
        for idx in [b.conv0.weight, b.conv1.weight] {
            let shape = p.get(idx).shape().to_vec();
            p.set(idx, Tensor::zeros(&shape)).unwrap();
        }
        let x = Tensor::randn(
            &[2, b.in_ch, 16, 16],
            1.0,
            &mut ChaCha8Rng::seed_from_u64(4),
        );
        let tape = Tape::new();
        let vars = p.bind(&tape, false);
        let got = b.forward(&vars, tape.constant(x.clone())).unwrap().value();
        let pooled = kernels::resample(&x, Resample::AvgPoolDown, false).unwrap();
        let want = kernels::conv2d(&pooled, p.get(b.skip), None, 0).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn rejects_wrong_input() {
        let (d, p) = toy();
        assert!(d.logits(&p, &Tensor::zeros(&[1, 3, 8, 8])).is_err());
        assert!(build_discriminator(12, &ChannelMap::new()).is_err());
    }
}
