//! Builds the single interleaved sequence the backbone consumes: chat
//! templating, modality wrapping, injection slots, targets and loss weights.

mod assemble;
mod segment;
mod template;

pub use assemble::{assemble, validate_spans, write_jsonl, ModelInput, Position, WeightHistogram};
pub use segment::{MaskFactors, Role, Segment, SegmentKind, Turn};
pub use template::{generation_prompt, render_template};

/// Canonical audio-understanding pair: the continuous stream of a clip
/// followed by its discrete codes, as two adjacent spans.
pub fn audio_understanding(continuous: candle_core::Tensor, codes: Vec<u32>) -> [Segment; 2] {
    [
        Segment::new(SegmentKind::AudioContinuous(continuous)),
        Segment::new(SegmentKind::AudioDiscrete(codes)),
    ]
}

#[cfg(test)]
mod tests;
