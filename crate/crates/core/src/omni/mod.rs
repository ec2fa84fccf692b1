//! Whole-system wiring: run configuration, the model bundle, training
//! sequence construction, the stage trainer and generation.

mod config;
mod generate;
mod items;
mod model;
mod run;
mod trainer;

pub use config::{RunConfig, TrainingConfig};
pub use generate::{generate_audio, generate_image, generate_text, render_tokens, strip_think, GeneratedText};
pub use items::{text_to_global, OmniBuilder};
pub use model::{load_text_tokenizer, Decoders, LanguageModel, OmniModel, Tokenizers, Vocoder};
pub use run::{init_run, train_run, RunDir, StageSelection};
pub use trainer::{train_components, train_stage, ComponentReport, FiredTrigger, StageMask, StageOutcome, StepMetrics};

#[cfg(test)]
mod tests;
