//! Tensor, autodiff and model primitives for identity-consistent video
//! generation at toy scale.

pub mod aipa;
pub mod checkpoint;
pub mod codec;
pub mod error;
pub mod irope;
pub mod model;
pub mod optim;
pub mod params;
pub mod rectified_flow;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod view_sampler;

pub use error::{Error, Result};
pub use rng::SplitRng;
pub use tape::{GradTape, Gradients, Var};
pub use tensor::Tensor;
