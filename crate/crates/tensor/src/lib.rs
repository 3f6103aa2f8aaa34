//! Reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! A [`Graph`] records every op applied to [`Var`] handles together with a
//! closure that maps the output gradient back onto the inputs. Parameters live
//! in a [`ParamStore`] under hierarchical names so they can be checkpointed.

mod error;
mod float;
pub mod gradcheck;
mod graph;
pub mod layers;
pub mod ops;
mod optim;
mod params;
mod tensor;

pub use error::{Error, Result};
pub use float::{matmul, Float};
pub use graph::{Gradients, Graph, Var};
pub use layers::{BatchNorm2d, Conv2d, Mode, Session};
pub use ops::ConvSpec;
pub use optim::Sgd;
pub use params::{kaiming_normal, ParamEntry, ParamId, ParamStore};
pub use tensor::Tensor;
