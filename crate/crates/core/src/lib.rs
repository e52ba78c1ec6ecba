pub mod autodiff;
pub mod data;
pub mod dim;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod gradsuite;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Gradients, Mode, Tape, Var};
pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
