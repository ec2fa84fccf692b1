//! Decoder-only transformer over the unified vocabulary with a two-ahead
//! auxiliary head, weighted cross-entropy and modality-constrained sampling.

mod config;
mod generate;
mod loss;
mod model;

pub use config::{BackboneConfig, MtpConfig};
pub use generate::{
    generate, sample_span, BackboneSession, GenerationOutput, LogitsProvider, RandomLogits, SamplerMode, SamplerSettings,
    SamplerState, SpanEvent,
};
pub use loss::{backbone_loss, log_softmax, weighted_cross_entropy, LossBreakdown};
pub use model::{Backbone, BackboneOutput, KvCache};

#[cfg(test)]
mod tests;
