#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod params;
pub mod synthesis;
pub mod tensor;
pub mod training;

pub use autodiff::{concat_channels, grad_norm_sq, Gradients, Tape, Var};
pub use error::{Error, Result};
pub use kernels::Resample;
pub use params::{Init, ParamKind, ParamLayout, ParamSpec, Params};
pub use tensor::{Scalar, Tensor};
