use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusKind;
use crate::error::{OmniError, Result};
use crate::interleave::MaskFactors;
use crate::vocab::{AdapterTarget, FreezePolicy};

/// Default factor applied to the published token counts.
pub const DEFAULT_BUDGET_SCALE: f64 = 1e-6;

/// Kind of training sequence a mixture key produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Text,
    Think,
    /// Discrete image-text pair in either direction.
    Image,
    /// Discrete speech-text pair in either direction.
    Audio,
    Caption,
    Ocr,
    Vqa,
    /// Caption, OCR or VQA, chosen per item.
    VisionUnderstanding,
    VisionGeneration,
    Asr,
    Tts,
    Edit,
    Video,
}

impl TaskKind {
    pub const ALL: [TaskKind; 13] = [
        TaskKind::Text,
        TaskKind::Think,
        TaskKind::Image,
        TaskKind::Audio,
        TaskKind::Caption,
        TaskKind::Ocr,
        TaskKind::Vqa,
        TaskKind::VisionUnderstanding,
        TaskKind::VisionGeneration,
        TaskKind::Asr,
        TaskKind::Tts,
        TaskKind::Edit,
        TaskKind::Video,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Text => "text",
            TaskKind::Think => "think",
            TaskKind::Image => "image",
            TaskKind::Audio => "audio",
            TaskKind::Caption => "caption",
            TaskKind::Ocr => "ocr",
            TaskKind::Vqa => "vqa",
            TaskKind::VisionUnderstanding => "vision_understanding",
            TaskKind::VisionGeneration => "vision_generation",
            TaskKind::Asr => "asr",
            TaskKind::Tts => "tts",
            TaskKind::Edit => "edit",
            TaskKind::Video => "video",
        }
    }

    /// Corpus collection the task draws from.
    pub fn source(self) -> CorpusKind {
        match self {
            TaskKind::Text | TaskKind::Think => CorpusKind::Conversations,
            TaskKind::Image
            | TaskKind::Caption
            | TaskKind::Ocr
            | TaskKind::Vqa
            | TaskKind::VisionUnderstanding
            | TaskKind::VisionGeneration => CorpusKind::Images,
            TaskKind::Audio | TaskKind::Asr | TaskKind::Tts => CorpusKind::Speech,
            TaskKind::Edit => CorpusKind::Edits,
            TaskKind::Video => CorpusKind::Videos,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Vision,
    Audio,
}

/// State change applied when a trigger fires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mutation {
    SetMaskFactor { modality: Modality, value: f64 },
    ScaleLr { factor: f64 },
}

impl Mutation {
    pub fn apply_to_mask(&self, factors: &mut MaskFactors) {
        if let Mutation::SetMaskFactor { modality, value } = *self {
            match modality {
                Modality::Text => factors.text = value,
                Modality::Vision => factors.vision = value,
                Modality::Audio => factors.audio = value,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub at_tokens: u64,
    pub mutation: Mutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub mixture: BTreeMap<TaskKind, f64>,
    pub freeze_policy: FreezePolicy,
    pub mask_factors: MaskFactors,
    pub token_budget: u64,
    pub triggers: Vec<Trigger>,
    pub context_length: usize,
}

impl StageSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OmniError::InvalidArgument(format!("stage {}: {m}", self.name)));
        if self.mixture.is_empty() {
            return bad("empty mixture".into());
        }
        if let Some((k, w)) = self.mixture.iter().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return bad(format!("mixture weight for {k} must be positive, got {w}"));
        }
        if self.token_budget == 0 {
            return bad("zero token budget".into());
        }
        if self.context_length == 0 {
            return bad("zero context length".into());
        }
        self.mask_factors.validate()?;
        for w in self.triggers.windows(2) {
            if w[1].at_tokens < w[0].at_tokens {
                return bad("triggers out of token order".into());
            }
        }
        if let Some(t) = self.triggers.iter().find(|t| t.at_tokens >= self.token_budget) {
            return bad(format!("trigger at {} is not below the budget {}", t.at_tokens, self.token_budget));
        }
        Ok(())
    }

    /// Mixture weights normalised to sum to one, in key order.
    pub fn fractions(&self) -> Vec<(TaskKind, f64)> {
        let total: f64 = self.mixture.values().sum();
        self.mixture.iter().map(|(k, w)| (*k, w / total)).collect()
    }
}

/// Stage names in execution order.
pub const STAGE_ORDER: [&str; 11] = ["P1", "P2", "P3", "E1", "E2", "E3", "S1", "S2", "S3a", "S3", "S4"];

/// Text pre-training context ladder preceding the multimodal stages.
pub const TEXT_CONTEXT_LADDER: [(&str, usize); 3] = [("T1", 256), ("T2", 512), ("T3", 1024)];

fn mix(pairs: &[(TaskKind, f64)]) -> BTreeMap<TaskKind, f64> {
    pairs.iter().copied().collect()
}

/// `share` for `first`, the remainder split evenly over `rest`.
fn share(first: TaskKind, share: f64, rest: &[TaskKind]) -> BTreeMap<TaskKind, f64> {
    let each = (1.0 - share) / rest.len() as f64;
    let mut m = mix(&[(first, share)]);
    for k in rest {
        m.insert(*k, each);
    }
    m
}

fn scaled(tokens: f64, scale: f64) -> u64 {
    (tokens * scale).round().max(1.0) as u64
}

/// The built-in curriculum with budgets of `published_tokens * scale`.
pub fn builtin_stages(scale: f64) -> Result<Vec<StageSpec>> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(OmniError::InvalidArgument(format!("budget scale must be positive, got {scale}")));
    }
    use TaskKind::*;
    let ones = MaskFactors::default();
    let stage = |name: &str, mixture, policy, tokens: f64, ctx| StageSpec {
        name: name.to_string(),
        mixture,
        freeze_policy: policy,
        mask_factors: ones,
        token_budget: scaled(tokens, scale),
        triggers: Vec::new(),
        context_length: ctx,
    };
    let pretrain_mix = mix(&[(Text, 2.0), (Image, 6.5), (Audio, 1.5)]);
    let mut p2 = stage("P2", pretrain_mix.clone(), FreezePolicy::Full, 2.3e12, 1024);
    p2.mask_factors.vision = 0.5;
    p2.triggers.push(Trigger {
        at_tokens: p2.token_budget / 2,
        mutation: Mutation::SetMaskFactor { modality: Modality::Vision, value: 1.0 },
    });
    let stages = vec![
        stage("P1", mix(&[(Image, 3.0), (Audio, 1.0)]), FreezePolicy::VocabExpansion, 302e9, 1024),
        p2,
        stage("P3", pretrain_mix, FreezePolicy::Full, 20e9, 1024),
        stage(
            "E1",
            mix(&[(Caption, 0.75), (Ocr, 0.20), (Vqa, 0.05)]),
            FreezePolicy::AdapterOnly(AdapterTarget::Vision),
            50e9,
            512,
        ),
        stage(
            "E2",
            mix(&[(Text, 0.121), (VisionUnderstanding, 0.385), (VisionGeneration, 0.344), (Audio, 0.150)]),
            FreezePolicy::Full,
            1.5e12,
            1024,
        ),
        stage("E3", mix(&[(Asr, 1.0)]), FreezePolicy::AdapterOnly(AdapterTarget::Audio), 50e9, 512),
        stage("S1", share(Text, 0.502, &[Caption, Asr, Tts, VisionGeneration, Edit]), FreezePolicy::Full, 200e9, 2048),
        stage(
            "S2",
            share(Text, 0.083, &[Caption, Ocr, Vqa, Asr, Tts, VisionGeneration, Edit]),
            FreezePolicy::Full,
            150e9,
            2048,
        ),
        stage("S3a", mix(&[(Video, 1.0)]), FreezePolicy::AdapterOnly(AdapterTarget::Compressor), 5e9, 1024),
        stage("S3", share(Video, 0.413, &[Text, Think, Caption, Asr]), FreezePolicy::Full, 100e9, 1024),
        stage("S4", share(Think, 0.5, &[Text, Caption, VisionGeneration, Edit]), FreezePolicy::Full, 50e9, 2048),
    ];
    for s in &stages {
        s.validate()?;
    }
    Ok(stages)
}

pub fn find_stage<'a>(stages: &'a [StageSpec], name: &str) -> Result<&'a StageSpec> {
    stages
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| OmniError::InvalidArgument(format!("unknown stage `{name}`")))
}

/// Context length a stage trains at.
pub fn context_for(stage: &StageSpec) -> usize {
    stage.context_length
}

/// Context length of a text-ladder stage (`T1`..`T3`).
pub fn text_context_for(name: &str) -> Result<usize> {
    TEXT_CONTEXT_LADDER
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| *c)
        .ok_or_else(|| OmniError::InvalidArgument(format!("unknown text stage `{name}`")))
}

impl FromStr for TaskKind {
    type Err = OmniError;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| OmniError::InvalidArgument(format!("unknown task kind `{s}`")))
    }
}
