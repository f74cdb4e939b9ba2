//! Dense `f64` tensors with reverse-mode automatic differentiation.

mod nn_ops;
mod ops;
mod tape;
mod tensor;

pub use nn_ops::{dropout_mask, ConvMode, LAYER_NORM_EPS};
pub use ops::{broadcast_shape, concat};
pub use tape::{DiffTensor, Tape};
pub use tensor::Tensor;

pub(crate) use tape::BackwardFn;
