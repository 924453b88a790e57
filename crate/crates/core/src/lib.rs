pub mod data;
pub mod datagen;
pub mod error;
pub mod losses;
pub mod model;
pub mod probe;
pub mod retrieval;
pub mod scalar;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result, TensorError};
pub use scalar::Scalar;

/// Double-precision instantiations used by the CLI and the tests.
pub type Tensor = tensor::Tensor<f64>;
pub type ParamStore = tensor::ParamStore<f64>;
pub type Tape = tensor::Tape<f64>;
pub type Model = model::Model<f64>;
pub type AttnMap = model::AttnMap<f64>;
