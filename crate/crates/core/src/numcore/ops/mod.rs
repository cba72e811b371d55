mod activation;
mod conv;
mod elementwise;
mod linalg;
mod norm;
mod pool;
pub(crate) mod shape;

pub use conv::{separable_param_count, Conv2dSpec};
pub use elementwise::{l1, mse};
pub use shape::concat;
