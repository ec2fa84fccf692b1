//! Unified token space: control tokens, text, and the vision/audio codebooks
//! laid out as contiguous id regions, plus freeze masks for vocabulary
//! expansion training.

mod freeze;
mod layout;
mod text;

pub use freeze::{
    expansion_freeze_mask, AdapterTarget, FreezeMask, FreezePolicy, ParamFreeze, ParamGroup,
    ParamRegistry,
};
pub use layout::*;
pub use text::TextTokenizer;
