//! Dense tensors with a reverse-mode autodiff tape.
//!
//! Values live in [`Tensor`]; differentiable computation is recorded on a
//! [`Tape`] and addressed through [`Var`] handles. Every operation checks its
//! output for non-finite values.

mod conv;
mod loss;
mod norm;
mod ops;
mod tape;
mod value;

pub use conv::{Conv2dSpec, Padding2d};
pub use norm::BatchStats;
pub use tape::{Tape, Var};
pub use value::Tensor;

pub use ops::dropout_mask;
