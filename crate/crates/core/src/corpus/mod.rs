//! Seeded synthetic corpora: labelled shape images, harmonic two-speaker
//! speech, templated conversations, moving-shape videos and recolour edits.

mod generators;
mod registry;

pub use generators::*;
pub use registry::{speaker_clips, Corpus, CorpusConfig, CorpusKind};
