//! Reverse-mode differentiation over a closed set of 2-D tensor ops, the
//! Adam optimizer, a finite-difference checker and the checkpoint format.

mod adam;
mod gradcheck;
mod linear;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use linear::Linear;
pub use params::{BoundParams, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{sigmoid, RowMixing, Tape, Unary, Var, NORM_EPS};
pub use tensor::{Scalar, Tensor};
