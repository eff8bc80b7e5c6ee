//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! Every operation that has at least one input with `requires_grad` records
//! a backward closure on the output node. Calling [`Tensor::backward`] on a
//! scalar walks the recorded graph in reverse topological order and
//! accumulates gradients into the leaves.
//!
//! The scalar type is [`Real`]: `f64` by default, `f32` with the `f32`
//! feature. All tensors in one build share that width.

mod autograd;
mod error;
pub mod gradcheck;
mod ops;
mod shape;
mod tensor;

pub use autograd::Tape;
pub use error::{Result, TensorError};
pub use ops::elementwise::{BinaryKind, UnaryKind};
pub use ops::nn::Conv2dSpec;
pub use ops::reduce::ReduceKind;
pub use shape::{broadcast_shapes, Shape};
pub use tensor::{no_grad, BackwardCtx, BackwardFn, Tensor};

#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// True when the crate was compiled with the widest scalar width.
pub const WIDEST: bool = cfg!(not(feature = "f32"));

/// Convert an `f64` literal into the configured scalar width.
#[inline(always)]
pub fn real(x: f64) -> Real {
    x as Real
}
