use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stage::{Mutation, StageSpec, TaskKind};
use crate::corpus::CorpusKind;
use crate::error::{OmniError, Result};
use crate::interleave::{MaskFactors, ModelInput};

/// Categorical sampler over a stage mixture.
#[derive(Debug, Clone)]
pub struct MixtureSampler {
    kinds: Vec<TaskKind>,
    cumulative: Vec<f64>,
}

impl MixtureSampler {
    pub fn new(mixture: &BTreeMap<TaskKind, f64>) -> Result<Self> {
        if mixture.is_empty() {
            return Err(OmniError::InvalidArgument("empty mixture".into()));
        }
        let mut acc = 0.0;
        let mut kinds = Vec::with_capacity(mixture.len());
        let mut cumulative = Vec::with_capacity(mixture.len());
        for (k, w) in mixture {
            if !(w.is_finite() && *w > 0.0) {
                return Err(OmniError::InvalidArgument(format!("mixture weight for {k} must be positive")));
            }
            acc += w;
            kinds.push(*k);
            cumulative.push(acc);
        }
        for c in &mut cumulative {
            *c /= acc;
        }
        Ok(Self { kinds, cumulative })
    }

    pub fn kinds(&self) -> &[TaskKind] {
        &self.kinds
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> TaskKind {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|c| *c <= u).min(self.kinds.len() - 1);
        self.kinds[i]
    }
}

/// Consumed tokens and items per task kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MixtureLedger {
    pub tokens: BTreeMap<TaskKind, u64>,
    pub items: BTreeMap<TaskKind, u64>,
    pub total: u64,
}

impl MixtureLedger {
    pub fn record(&mut self, kind: TaskKind, tokens: u64) {
        *self.tokens.entry(kind).or_default() += tokens;
        *self.items.entry(kind).or_default() += 1;
        self.total += tokens;
    }

    pub fn total_items(&self) -> u64 {
        self.items.values().sum()
    }

    /// Per-kind counters sum to the total.
    pub fn is_conserved(&self) -> bool {
        self.tokens.values().sum::<u64>() == self.total
    }

    /// Share of drawn items per kind.
    pub fn item_fractions(&self) -> BTreeMap<TaskKind, f64> {
        let n = self.total_items().max(1) as f64;
        self.items.iter().map(|(k, c)| (*k, *c as f64 / n)).collect()
    }

    /// Share of consumed tokens per kind.
    pub fn token_fractions(&self) -> BTreeMap<TaskKind, f64> {
        let n = self.total.max(1) as f64;
        self.tokens.iter().map(|(k, c)| (*k, *c as f64 / n)).collect()
    }
}

/// Exactly-once trigger bookkeeping for one stage run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriggerState {
    fired: Vec<bool>,
    last_total: u64,
}

impl TriggerState {
    pub fn new(stage: &StageSpec) -> Self {
        Self { fired: vec![false; stage.triggers.len()], last_total: 0 }
    }

    pub fn fired(&self) -> &[bool] {
        &self.fired
    }

    fn fire(&mut self, i: usize) -> Result<()> {
        if std::mem::replace(&mut self.fired[i], true) {
            return Err(OmniError::Internal(format!("trigger {i} fired twice")));
        }
        Ok(())
    }

    /// Fires, in order, every pending trigger whose threshold the ledger
    /// total has reached.
    pub fn advance(&mut self, ledger: &MixtureLedger, stage: &StageSpec) -> Result<Vec<Mutation>> {
        if self.fired.len() != stage.triggers.len() {
            return Err(OmniError::InvalidArgument(format!("trigger state does not belong to stage {}", stage.name)));
        }
        if ledger.total < self.last_total {
            return Err(OmniError::Internal(format!(
                "ledger went backwards: {} after {}",
                ledger.total, self.last_total
            )));
        }
        self.last_total = ledger.total;
        let mut out = Vec::new();
        for (i, t) in stage.triggers.iter().enumerate() {
            if !self.fired[i] && ledger.total >= t.at_tokens {
                self.fire(i)?;
                out.push(t.mutation);
            }
        }
        Ok(out)
    }
}

/// Hands out corpus indices sequentially per collection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusCursor {
    next: BTreeMap<CorpusKind, usize>,
    pub cycle: bool,
}

impl CorpusCursor {
    pub fn cycling() -> Self {
        Self { next: BTreeMap::new(), cycle: true }
    }

    pub fn next_index(&mut self, kind: CorpusKind, available: usize) -> Result<usize> {
        if available == 0 {
            return Err(OmniError::Missing(format!("corpus data for {kind:?}")));
        }
        let n = self.next.entry(kind).or_default();
        if *n >= available {
            if !self.cycle {
                return Err(OmniError::InvalidArgument(format!("{kind:?} corpus exhausted after {available} items")));
            }
            *n = 0;
        }
        let i = *n;
        *n += 1;
        Ok(i)
    }
}

/// Turns a drawn task into one assembled sequence.
pub trait ItemBuilder {
    /// Items available for a corpus collection.
    fn available(&self, kind: CorpusKind) -> usize;

    fn build(&mut self, task: TaskKind, index: usize, rng: &mut ChaCha8Rng, factors: &MaskFactors)
        -> Result<ModelInput>;
}

#[derive(Debug, Clone)]
pub struct SampledItem {
    pub task: TaskKind,
    pub input: ModelInput,
}

/// Draws `batch` items from the stage mixture, builds them, truncates each
/// to the stage context and records realized token counts.
#[allow(clippy::too_many_arguments)]
pub fn sample_batch(
    stage: &StageSpec,
    sampler: &MixtureSampler,
    builder: &mut dyn ItemBuilder,
    cursor: &mut CorpusCursor,
    rng: &mut ChaCha8Rng,
    factors: &MaskFactors,
    batch: usize,
    ledger: &mut MixtureLedger,
) -> Result<Vec<SampledItem>> {
    for k in stage.mixture.keys() {
        if builder.available(k.source()) == 0 {
            return Err(OmniError::Missing(format!("corpus data for mixture key {k}")));
        }
    }
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        let task = sampler.draw(rng);
        let index = cursor.next_index(task.source(), builder.available(task.source()))?;
        let mut input = builder.build(task, index, rng, factors)?;
        if input.len() > stage.context_length {
            input.truncate(stage.context_length);
        }
        ledger.record(task, input.len() as u64);
        out.push(SampledItem { task, input });
    }
    Ok(out)
}
