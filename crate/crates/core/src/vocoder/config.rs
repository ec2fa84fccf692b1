use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};

/// Samples generated per audio token.
pub const TOKEN_SPAN_SECS: f64 = 0.040;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocoderConfig {
    pub sample_rate: u32,
    pub factors: Vec<usize>,
    pub codebook_size: usize,
    pub code_dim: usize,
    pub speaker_dim: usize,
    /// Channels after the input convolution; halved at every stage.
    pub channels: usize,
    /// Dilations of the residual convolutions after each upsampling.
    pub dilations: Vec<usize>,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            factors: vec![8, 5, 4, 4],
            codebook_size: 6561,
            code_dim: 64,
            speaker_dim: 64,
            channels: 64,
            dilations: vec![1, 3],
        }
    }
}

impl VocoderConfig {
    pub fn hop(&self) -> usize {
        self.factors.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let want = (self.sample_rate as f64 * TOKEN_SPAN_SECS).round() as usize;
        if self.factors.is_empty() || self.hop() != want {
            return Err(OmniError::InvalidArgument(format!(
                "upsampling factors {:?} multiply to {}, need {want} samples per 40 ms token",
                self.factors,
                self.hop()
            )));
        }
        if self.factors.contains(&0) {
            return Err(OmniError::InvalidArgument("upsampling factor of zero".into()));
        }
        if self.channels >> self.factors.len() == 0 {
            return Err(OmniError::InvalidArgument(format!(
                "{} channels cannot be halved {} times",
                self.channels,
                self.factors.len()
            )));
        }
        if self.codebook_size == 0 || self.code_dim == 0 || self.speaker_dim == 0 {
            return Err(OmniError::InvalidArgument("vocoder sizes must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_invariant() {
        let c = VocoderConfig::default();
        c.validate().unwrap();
        assert_eq!(c.hop(), 640);
        let bad = VocoderConfig { factors: vec![8, 5, 4], ..VocoderConfig::default() };
        assert!(bad.validate().is_err());
        let other_rate = VocoderConfig { sample_rate: 24_000, factors: vec![8, 5, 4, 6], ..VocoderConfig::default() };
        other_rate.validate().unwrap();
    }
}
