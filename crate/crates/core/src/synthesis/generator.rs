use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamLayout, Params};
use crate::tensor::{Scalar, Tensor};

use super::blocks::{BaseBlock, BlockOutput, SynthesisBlock};
use super::config::GeneratorConfig;
use super::mapping::MappingNetwork;
use super::modconv::ModulatedConv;

/// Generator architecture; parameters live separately in [`Params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    config: GeneratorConfig,
    layout: ParamLayout,
    mapping: MappingNetwork,
    base: BaseBlock,
    blocks: Vec<SynthesisBlock>,
}

pub struct GeneratorOutput<'t, T> {
    pub styles: Var<'t, T>,
    /// `sum_j Up^(J-j)(I_j)`, accumulated progressively.
    pub image: Var<'t, T>,
    /// Base block first, then one entry per upsampling block.
    pub blocks: Vec<BlockOutput<'t, T>>,
}

impl<T> GeneratorOutput<'_, T> {
    pub fn images(&self) -> Vec<Var<'_, T>> {
        self.blocks.iter().map(|b| b.image).collect()
    }
}

/// Off-tape copy of everything a forward pass exposes.
#[derive(Clone, Debug)]
pub struct GeneratorSnapshot<T> {
    pub image: Tensor<T>,
    pub images: Vec<Tensor<T>>,
    /// Modulated features `f_j'` entering each toRGB.
    pub features: Vec<Tensor<T>>,
    /// toRGB kernels `W_j`, shape `3 x c_j x 1 x 1`.
    pub rgb_weights: Vec<Tensor<T>>,
    pub rgb_biases: Vec<Tensor<T>>,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = ParamLayout::new();
        let mapping = MappingNetwork::declare(&mut layout, config.style_dim, config.mapping_depth);
        let base = BaseBlock::declare(&mut layout, config.channels(4), config.style_dim);
        let mut blocks = Vec::new();
        let mut in_ch = config.channels(4);
        for res in config.resolutions().into_iter().skip(1) {
            let out_ch = config.channels(res);
            blocks.push(SynthesisBlock::declare(
                &mut layout,
                res,
                config.variant,
                in_ch,
                out_ch,
                config.squeeze_ratio,
                config.style_dim,
            )?);
            in_ch = out_ch;
        }
        Ok(Generator {
            config,
            layout,
            mapping,
            base,
            blocks,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn mapping(&self) -> &MappingNetwork {
        &self.mapping
    }

    pub fn base(&self) -> &BaseBlock {
        &self.base
    }

    pub fn blocks(&self) -> &[SynthesisBlock] {
        &self.blocks
    }

    /// toRGB layers from 4x4 upwards.
    pub fn rgb_layers(&self) -> Vec<&ModulatedConv> {
        std::iter::once(&self.base.to_rgb)
            .chain(self.blocks.iter().map(SynthesisBlock::to_rgb))
            .collect()
    }

    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Params<T> {
        Params::init(&self.layout, rng)
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        vars: &[Var<'t, T>],
        z: Var<'t, T>,
    ) -> Result<GeneratorOutput<'t, T>> {
        self.check_vars(vars.len())?;
        let w = self.mapping.forward(vars, z)?;
        self.forward_styles(vars, w)
    }

    /// Synthesis from styles `[N, style_dim]`, bypassing the mapping network.
    pub fn forward_styles<'t, T: Scalar>(
        &self,
        vars: &[Var<'t, T>],
        w: Var<'t, T>,
    ) -> Result<GeneratorOutput<'t, T>> {
        self.check_vars(vars.len())?;
        let up = self.config.upsample.resample();
        let first = self.base.forward(vars, w)?;
        let mut image = first.image;
        let mut x = first.features;
        let mut outs = vec![first];
        for block in &self.blocks {
            let o = block.forward(vars, x, w, up)?;
            image = image.resample(up, false)?.add(o.image)?;
            x = o.features;
            outs.push(o);
        }
        Ok(GeneratorOutput {
            styles: w,
            image,
            blocks: outs,
        })
    }

    fn check_vars(&self, n: usize) -> Result<()> {
        if n != self.layout.len() {
            return Err(Error::Config(format!(
                "generator expects {} parameter arrays, got {n}",
                self.layout.len()
            )));
        }
        Ok(())
    }

    /// Forward pass on a private tape, returning plain tensors.
    pub fn generator_forward<T: Scalar>(
        &self,
        params: &Params<T>,
        z: &Tensor<T>,
    ) -> Result<GeneratorSnapshot<T>> {
        let tape = Tape::new();
        let vars = params.bind(&tape, false);
        let out = self.forward(&vars, tape.constant(z.clone()))?;
        let rgb = self.rgb_layers();
        Ok(GeneratorSnapshot {
            image: out.image.value(),
            images: out.blocks.iter().map(|b| b.image.value()).collect(),
            features: out.blocks.iter().map(|b| b.rgb_input.value()).collect(),
            rgb_weights: rgb.iter().map(|l| params.get(l.weight).clone()).collect(),
            rgb_biases: rgb.iter().map(|l| params.get(l.bias).clone()).collect(),
        })
    }

    /// Images only, `[N, 3, R, R]`.
    pub fn generate<T: Scalar>(&self, params: &Params<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let vars = params.bind(&tape, false);
        Ok(self.forward(&vars, tape.constant(z.clone()))?.image.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{self, Resample};
    use crate::synthesis::config::{BlockVariant, UpsampleMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn latent<T: Scalar>(n: usize, dim: usize, seed: u64) -> Tensor<T> {
        Tensor::randn(&[n, dim], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn two_level_image_is_up_plus_second() {
        let g = Generator::new(GeneratorConfig::desk(8, UpsampleMode::Nearest)).unwrap();
        let p: Params<f64> = g.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let s = g.generator_forward(&p, &latent(2, 16, 2)).unwrap();
        assert_eq!(s.images.len(), 2);
        let up = kernels::resample(&s.images[0], Resample::NearestUp, false).unwrap();
        let want = up.zip_map(&s.images[1], |a, b| a + b).unwrap();
        assert_eq!(s.image, want);
    }

    #[test]
    fn zero_rgb_layers_give_zero_image() {
        let g = Generator::new(GeneratorConfig::desk(8, UpsampleMode::Nearest)).unwrap();
        let mut p: Params<f64> = g.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        for l in g.rgb_layers() {
            let shape = p.get(l.weight).shape().to_vec();
            p.set(l.weight, Tensor::zeros(&shape)).unwrap();
        }
        let s = g.generator_forward(&p, &latent(1, 16, 3)).unwrap();
        assert!(s.image.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn every_variant_builds_and_runs() {
        for v in BlockVariant::ALL {
            let g = Generator::new(GeneratorConfig::toy(v)).unwrap();
            let p: Params<f32> = g.init_params(&mut ChaCha8Rng::seed_from_u64(4));
            let img = g.generate(&p, &latent(2, 32, 5)).unwrap();
            assert_eq!(img.shape(), [2, 3, 16, 16]);
            assert!(img.is_finite());
        }
    }

    #[test]
    fn wrong_param_count_rejected() {
        let g = Generator::new(GeneratorConfig::desk(8, UpsampleMode::Nearest)).unwrap();
        let tape = Tape::<f64>::new();
        let z = tape.constant(latent(1, 16, 1));
        assert!(g.forward(&[], z).is_err());
    }
}
