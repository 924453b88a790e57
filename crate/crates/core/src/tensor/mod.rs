//! Differentiable numeric kernel: dense tensors, a recording tape, and a
//! finite-difference oracle for checking it.

pub mod gradcheck;
mod params;
pub mod sweep;
mod tape;
mod value;

pub use params::{Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use value::Tensor;
