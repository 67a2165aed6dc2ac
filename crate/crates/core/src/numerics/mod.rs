//! Dense `f64` tensors, analytic-gradient kernels, a finite-difference
//! checker, the parameter store and the checkpoint container.

mod gradcheck;
mod ops;
mod param;
pub mod serialize;
mod tensor;

pub use gradcheck::{grad_check, FnOp};
pub use ops::*;
pub use param::{Gradients, Init, ParamGroup, ParamId, ParamSpec, ParamStore, Parameter};
pub use tensor::Tensor;
