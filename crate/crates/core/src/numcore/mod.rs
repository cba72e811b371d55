//! Tensors, reverse-mode autodiff, and the neural-network primitives the
//! models are built from.

pub mod gradcheck;
pub mod ops;
pub mod optim;
mod params;
mod real;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use ops::{concat, l1, mse, separable_param_count, Conv2dSpec};
pub use params::{Init, ParamId, ParamKind, ParamStore, Parameter};
pub use real::{gemm, Real};
pub use tape::{BackwardFn, Gradients, ParamGrads, Tape, Var};
pub use tensor::{broadcast_shape, Tensor};
