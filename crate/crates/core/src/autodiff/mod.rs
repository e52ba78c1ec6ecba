//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor).

mod conv;
pub mod gradcheck;
mod norm;
mod ops;
mod pool;
mod tape;

pub use conv::conv_out_dim;
pub use gradcheck::{
    compare_gradients, compare_gradients_floored, grad_check, grad_check_many, relative_error, relative_error_floored,
};
pub use norm::{BatchNormState, BN_EPSILON, BN_MOMENTUM};
pub use ops::{log_sum_exp, sigmoid, softplus, Activation};
pub use tape::{Gradients, Mode, Tape, Var};
pub(crate) use tape::{Backward, BackwardCtx};
