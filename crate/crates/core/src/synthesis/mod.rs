//! StyleGAN2 synthesis path: mapping network, modulated convolutions,
//! toRGB and the generator block variants.

pub mod blocks;
pub mod config;
pub mod generator;
pub mod mapping;
pub mod modconv;

pub use blocks::{
    BaseBlock, BlockOutput, RgbTap, SkipBlock, SqueezeBlock, SqueezeIntermediates, SynthesisBlock,
};
pub use config::{BlockVariant, ChannelMap, GeneratorConfig, UpsampleMode};
pub use generator::{Generator, GeneratorOutput, GeneratorSnapshot};
pub use mapping::MappingNetwork;
pub use modconv::{
    modulate_demodulate, to_rgb, ModConvOutput, ModulatedConv, DEMOD_EPS, LRELU_SLOPE,
};
