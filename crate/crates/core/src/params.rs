//! Named parameter declarations and storage.
//!
//! A model first declares its arrays into a [`ParamLayout`] (name, shape,
//! initializer, accounting kind). Parameter counting works from the layout
//! alone, without allocating; [`Params`] holds the actual tensors in
//! declaration order.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal { std: f64 },
    Const(f64),
}

/// What a parameter array is, for accounting purposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Kernel of a block convolution other than toRGB.
    ConvKernel,
    RgbKernel,
    ConvBias,
    RgbBias,
    AffineWeight,
    AffineBias,
    MappingWeight,
    MappingBias,
    ConstInput,
    DenseWeight,
    DenseBias,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub kind: ParamKind,
    /// Resolution of the owning generator block, if any.
    pub block: Option<usize>,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    block: Option<usize>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tags subsequent declarations with a block resolution.
    pub fn set_block(&mut self, block: Option<usize>) {
        self.block = block;
    }

    pub fn declare(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        kind: ParamKind,
    ) -> usize {
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
            kind,
            block: self.block,
        });
        self.specs.len() - 1
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn total(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }
}

/// Parameter tensors in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn init<R: Rng + ?Sized>(layout: &ParamLayout, rng: &mut R) -> Self {
        let tensors = layout
            .specs()
            .iter()
            .map(|s| match s.init {
                Init::Normal { std } => Tensor::randn(&s.shape, std, rng),
                Init::Const(v) => Tensor::full(&s.shape, T::of(v)),
            })
            .collect();
        Params {
            names: layout.specs().iter().map(|s| s.name.clone()).collect(),
            tensors,
        }
    }

    /// Builds from named tensors, validating names and shapes against the
    /// layout.
    pub fn from_named(layout: &ParamLayout, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        if named.len() != layout.len() {
            return Err(Error::Config(format!(
                "expected {} parameter arrays, found {}",
                layout.len(),
                named.len()
            )));
        }
        for (spec, (name, t)) in layout.specs().iter().zip(&named) {
            if &spec.name != name {
                return Err(Error::Config(format!(
                    "parameter order mismatch: expected `{}`, found `{name}`",
                    spec.name
                )));
            }
            if spec.shape != t.shape() {
                return Err(Error::Config(format!(
                    "parameter `{name}` has shape {:?}, config expects {:?}",
                    t.shape(),
                    spec.shape
                )));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Params { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn get(&self, idx: usize) -> &Tensor<T> {
        &self.tensors[idx]
    }

    pub fn set(&mut self, idx: usize, t: Tensor<T>) -> Result<()> {
        if t.shape() != self.tensors[idx].shape() {
            return Err(Error::shape(
                "Params::set",
                format!("{:?} vs {:?}", t.shape(), self.tensors[idx].shape()),
            ));
        }
        self.tensors[idx] = t;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    /// Records every tensor on `tape`, as leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Vec<Var<'t, T>> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}
