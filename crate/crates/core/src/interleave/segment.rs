use std::fmt;
use std::str::FromStr;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::System => crate::vocab::ROLE_SYSTEM,
            Role::User => crate::vocab::ROLE_USER,
            Role::Assistant => crate::vocab::ROLE_ASSISTANT,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = OmniError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "system" => Ok(Role::System),
            "user" => Ok(Role::User),
            "assistant" => Ok(Role::Assistant),
            other => Err(OmniError::InvalidArgument(format!("unknown role {other:?}"))),
        }
    }
}

/// Payload of a segment. Text ids are global ids (text region or control
/// tokens); discrete vision/audio ids are local codebook ids; continuous
/// payloads are `(n, hidden)` tensors already adapted to the backbone width.
#[derive(Debug, Clone)]
pub enum SegmentKind {
    TextIds(Vec<TokenId>),
    VisionDiscrete(Vec<u32>),
    AudioDiscrete(Vec<u32>),
    VisionContinuous(Tensor),
    AudioContinuous(Tensor),
}

impl SegmentKind {
    pub fn name(&self) -> &'static str {
        match self {
            SegmentKind::TextIds(_) => "text_ids",
            SegmentKind::VisionDiscrete(_) => "vision_discrete",
            SegmentKind::AudioDiscrete(_) => "audio_discrete",
            SegmentKind::VisionContinuous(_) => "vision_continuous",
            SegmentKind::AudioContinuous(_) => "audio_continuous",
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, SegmentKind::VisionContinuous(_) | SegmentKind::AudioContinuous(_))
    }

    /// Positions contributed before start/end wrapping.
    pub fn payload_len(&self) -> usize {
        match self {
            SegmentKind::TextIds(v) => v.len(),
            SegmentKind::VisionDiscrete(v) | SegmentKind::AudioDiscrete(v) => v.len(),
            SegmentKind::VisionContinuous(t) | SegmentKind::AudioContinuous(t) => t.dims()[0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Segment {
    pub kind: SegmentKind,
    pub role: Option<Role>,
    /// Continuous vision segment that is the source of an edit; the next
    /// segment must be the discrete span of the edited image.
    pub edit_source: bool,
}

impl Segment {
    pub fn new(kind: SegmentKind) -> Self {
        Self { kind, role: None, edit_source: false }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = Some(role);
        self
    }

    pub fn edit_source(mut self) -> Self {
        self.edit_source = true;
        self
    }

    pub fn text(ids: Vec<TokenId>) -> Self {
        Self::new(SegmentKind::TextIds(ids))
    }
}

/// One conversation turn before templating.
#[derive(Debug, Clone)]
pub struct Turn {
    pub role: Role,
    pub segments: Vec<Segment>,
    pub think: Option<Vec<TokenId>>,
}

impl Turn {
    pub fn new(role: Role, segments: Vec<Segment>) -> Self {
        Self { role, segments, think: None }
    }

    pub fn with_think(mut self, think: Vec<TokenId>) -> Self {
        self.think = Some(think);
        self
    }
}

/// Per-modality multipliers on target loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskFactors {
    pub text: f64,
    pub vision: f64,
    pub audio: f64,
}

impl Default for MaskFactors {
    fn default() -> Self {
        Self { text: 1.0, vision: 1.0, audio: 1.0 }
    }
}

impl MaskFactors {
    pub fn new(text: f64, vision: f64, audio: f64) -> Result<Self> {
        let f = Self { text, vision, audio };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("text", self.text), ("vision", self.vision), ("audio", self.audio)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(OmniError::InvalidArgument(format!(
                    "mask factor {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}
