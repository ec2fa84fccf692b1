//! Desk-scale any-to-any omnimodal language model stack.
//!
//! One decoder-only transformer predicts the next token over a vocabulary
//! that extends text with vision and audio codebook entries. Continuous
//! perceptual embeddings are injected into the same sequence, and discrete
//! vision/audio spans are decoded back to pixels and waveforms.

pub mod backbone;
pub mod cli;
pub mod corpus;
pub mod curriculum;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod fsq;
pub mod interleave;
pub mod nn;
pub mod omni;
pub mod vision;
pub mod vocoder;
pub mod vocab;

pub use error::{OmniError, Result};
