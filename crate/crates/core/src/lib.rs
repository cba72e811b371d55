//! Speech enhancement with a depthwise-separable dense encoder, two-stage
//! conformers, parallel magnitude-mask / phase decoders, a metric
//! discriminator and L1 magnitude pruning, all on a small reverse-mode
//! autodiff core.

// `!(x > 0.0)` also rejects NaN; `add`/`mul`/`sub` are fallible tape ops,
// not the operator traits; index loops walk several buffers in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait, clippy::needless_range_loop)]

pub mod discriminator;
pub mod dsp;
pub mod error;
pub mod exec;
pub mod generator;
pub mod gradsuite;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod numcore;
pub mod pipeline;
pub mod pruning;

pub use error::{Error, Result};
