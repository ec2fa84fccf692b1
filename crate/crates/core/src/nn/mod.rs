//! Small neural-network toolkit on top of candle: named parameters with
//! deterministic initialisation, layers, a mask-aware optimizer, checkpoints
//! and finite-difference gradient checks.

mod block;
pub mod checkpoint;
pub mod gradcheck;
mod layers;
mod optim;
mod params;
pub mod resize;

pub use block::{EncoderBlock, MultiHeadAttention};
pub use layers::*;
pub use optim::{AdamW, AdamWConfig, Gradients};
pub use params::{Init, ParamStore, Params};
