//! Tiny conditional denoiser: layers, hand-written backward pass, gradient
//! checking, Adam and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod denoiser;
pub mod gradcheck;
pub mod ops;

pub use adam::{adam_step, AdamState};
pub use denoiser::{backward, forward, predict, DenoiserInput, DenoiserParams, ForwardCache, LayerDesc, Layout, NodeOp};
pub use gradcheck::grad_check;
