//! Hand-written dense linear algebra and the four-layer network.

pub mod gradcheck;
pub mod matrix;
pub mod model;
pub mod params;

pub use gradcheck::{finite_difference_check, sample_gradients, GradSample};
pub use matrix::Matrix;
pub use model::{backward, eval_loss, forward, total_loss, ForwardCache, Mode};
pub use params::{Arch, Layer, ModelParams, TENSOR_NAMES};
