//! Dense-tensor computation with reverse-mode differentiation, gradient
//! checking, Adam, deterministic random streams, and the checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{AdamHyper, AdamState};
pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use rng::{RngStream, StreamId};
pub use tape::{patch_count, Gradients, Tape, Var};
pub use tensor::Tensor;
