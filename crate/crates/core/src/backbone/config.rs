use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub context_length: usize,
    pub mlp_ratio: usize,
    pub rope_theta: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        // room for an edit pair: two 731-token vision spans plus the prompt
        Self {
            layers: 4,
            hidden: 128,
            heads: 4,
            context_length: 2048,
            mlp_ratio: 4,
            rope_theta: 10_000.0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(OmniError::InvalidArgument(format!(
                "hidden {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if (self.hidden / self.heads) % 2 != 0 {
            return Err(OmniError::InvalidArgument("head width must be even for rotary encoding".into()));
        }
        if self.context_length < 2 {
            return Err(OmniError::InvalidArgument("context length must be at least 2".into()));
        }
        if self.layers == 0 || self.mlp_ratio == 0 {
            return Err(OmniError::InvalidArgument("layers and mlp ratio must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtpConfig {
    pub enabled: bool,
    pub weight: f64,
    pub extra_layers: usize,
}

impl Default for MtpConfig {
    fn default() -> Self {
        Self { enabled: true, weight: 0.2, extra_layers: 1 }
    }
}

impl MtpConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(OmniError::InvalidArgument(format!(
                "MTP weight must be non-negative, got {}",
                self.weight
            )));
        }
        Ok(())
    }
}
