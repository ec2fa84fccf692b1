//! Declarative training curriculum: stage specs, mixture sampling, token
//! ledgers and exactly-once triggers.

mod mixture;
mod stage;

pub use mixture::{sample_batch, CorpusCursor, ItemBuilder, MixtureLedger, MixtureSampler, SampledItem, TriggerState};
pub use stage::{
    builtin_stages, context_for, find_stage, text_context_for, Modality, Mutation, StageSpec, TaskKind, Trigger,
    DEFAULT_BUDGET_SCALE, STAGE_ORDER, TEXT_CONTEXT_LADDER,
};

use std::path::Path;

use crate::error::Result;

pub fn write_stages(path: &Path, stages: &[StageSpec]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(stages)?)?;
    Ok(())
}

pub fn read_stages(path: &Path) -> Result<Vec<StageSpec>> {
    let stages: Vec<StageSpec> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    for s in &stages {
        s.validate()?;
    }
    Ok(stages)
}

#[cfg(test)]
mod tests;
