use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Init, ParamKind, ParamLayout};
use crate::tensor::Scalar;

use super::modconv::LRELU_SLOPE;

/// `depth` fully-connected layers of width `dim`, each followed by
/// leaky-relu(0.2). Maps latents `z` to styles `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingNetwork {
    pub dim: usize,
    /// `(weight [dim, dim], bias [dim])` parameter indices per layer.
    pub layers: Vec<(usize, usize)>,
}

impl MappingNetwork {
    pub fn declare(layout: &mut ParamLayout, dim: usize, depth: usize) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let w = layout.declare(
                    format!("mapping.{i}.weight"),
                    &[dim, dim],
                    Init::Normal {
                        std: 1.0 / (dim as f64).sqrt(),
                    },
                    ParamKind::MappingWeight,
                );
                let b = layout.declare(
                    format!("mapping.{i}.bias"),
                    &[dim],
                    Init::Const(0.0),
                    ParamKind::MappingBias,
                );
                (w, b)
            })
            .collect();
        MappingNetwork { dim, layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `z: [N, dim] -> w: [N, dim]`.
    pub fn forward<'t, T: Scalar>(&self, vars: &[Var<'t, T>], z: Var<'t, T>) -> Result<Var<'t, T>> {
        let zs = z.shape();
        if zs.len() != 2 || zs[1] != self.dim {
            return Err(Error::shape(
                "mapping_network",
                format!("latent shape {zs:?}, expected [N, {}]", self.dim),
            ));
        }
        let mut x = z;
        for &(w, b) in &self.layers {
            x = x
                .matmul(vars[w], false, true)?
                .add_bias(vars[b])?
                .leaky_relu(LRELU_SLOPE);
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::params::Params;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_nonnegative_input() {
        let mut layout = ParamLayout::new();
        let m = MappingNetwork::declare(&mut layout, 4, 1);
        let p = Params::<f64>::from_named(
            &layout,
            vec![
                ("mapping.0.weight".into(), Tensor::eye(4)),
                ("mapping.0.bias".into(), Tensor::zeros(&[4])),
            ],
        )
        .unwrap();
        let tape = Tape::new();
        let vars = p.bind(&tape, false);
        let z = Tensor::from_f64(&[1, 4], &[0.0, 0.5, 2.0, 7.25]).unwrap();
        let w = m.forward(&vars, tape.constant(z.clone())).unwrap();
        assert_eq!(w.value(), z);
    }

    #[test]
    fn same_latent_same_style() {
        let mut layout = ParamLayout::new();
        let m = MappingNetwork::declare(&mut layout, 8, 3);
        let p = Params::<f32>::init(&layout, &mut ChaCha8Rng::seed_from_u64(1));
        let z = Tensor::randn(&[2, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let run = || {
            let tape = Tape::new();
            let vars = p.bind(&tape, false);
            m.forward(&vars, tape.constant(z.clone())).unwrap().value()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_wrong_latent_dim() {
        let mut layout = ParamLayout::new();
        let m = MappingNetwork::declare(&mut layout, 8, 1);
        let p = Params::<f64>::init(&layout, &mut ChaCha8Rng::seed_from_u64(1));
        let tape = Tape::new();
        let vars = p.bind(&tape, false);
        assert!(m
            .forward(&vars, tape.constant(Tensor::zeros(&[1, 7])))
            .is_err());
    }
}
