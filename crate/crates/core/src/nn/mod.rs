//! Small, exactly differentiable network substrate.

mod arch;
pub mod gradcheck;
pub mod layers;
mod loss;
mod model;
mod network;

pub use arch::{Arch, Extent, Layer};
pub use loss::{class_weights, cross_entropy, histogram, weighted_ce, CategoryWeights, LossOutput};
pub use model::{build_model, ModelState, NamedTensor};
pub use network::{
    backward, forward, piecewise_signature, updated_running, Backward, BnBatchStats, ForwardOutput,
    Mode,
};
