//! Minimal `f64` tensor engine with tape-based reverse-mode differentiation.

mod gradcheck;
pub(crate) mod kernels;
mod optim;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, relative_error, GradCheck, RELATIVE_FLOOR};
pub use optim::Sgd;
pub use param::{kaiming_uniform, ParamGroup, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
