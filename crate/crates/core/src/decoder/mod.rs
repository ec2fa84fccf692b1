//! Token-to-image decoder: a small diffusion transformer conditioned by
//! channel concatenation of resized token features, trained with a
//! rectified-flow objective and sampled with autoguidance.

mod codec;
mod dit;
mod flow;
mod phases;
mod pipeline;

pub use codec::{latent_size, LatentCodec, LatentGrid, LATENT_CHANNELS, LATENT_FACTOR};
pub use dit::{ConcatDit, CrossAttnDit, DecoderConfig, VelocityField};
pub use flow::{flow_loss, gaussian, interpolate, sample, train_step, GuidanceConfig};
pub use phases::{phase_schedule, CropWindow, PhaseConfig};
pub use pipeline::{
    decode_tokens, features_to_cond, prepare_example, prepare_from_features, stack_examples, tokens_to_cond,
    DecodeOptions, DecoderExample,
};

#[cfg(test)]
mod tests;
